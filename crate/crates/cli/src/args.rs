// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "msc",
    version,
    about = "Masked scene contrast: view generation, matching and desk-scale pre-training for point clouds",
    after_help = "Exit codes: 0 ok, 1 usage or configuration error, 2 data error, 3 numerical failure."
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Configuration file (`key = value` lines); defaults apply to absent keys
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Random seed; overrides the `seed` key of the configuration
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for scene-parallel work [default: available cores]
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
    /// Log more (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the effective configuration with every key
    Config,
    /// Write synthetic scenes as scene_0000.mscb, scene_0001.mscb, ...
    Synth {
        /// Number of scenes
        #[arg(long)]
        count: usize,
        /// Output directory (created if missing)
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Generate one masked query/key view pair from a scene
    ///
    /// Writes query.<ext> and key.<ext>, mask previews query_mask.ply and
    /// key_mask.ply (masked points red, others grey), and pairs.csv with
    /// columns `query,key` (unmasked correspondences).
    Viewgen {
        /// Input scene (.mscb or .ply)
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Output directory (created if missing)
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// View format: mscb, ply-ascii, ply-binary-le
        #[arg(long, default_value = "mscb")]
        format: String,
    },
    /// Correspondence counts over a dataset
    ///
    /// CSV columns: scene,query_points,key_points,matches,unmasked_matches,used
    /// where `used` is the count after subsampling to n_max.
    MatchStats {
        /// Dataset directory of .mscb / .ply scenes
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Output CSV [default: stdout]
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Pre-train the desk-scale encoder
    ///
    /// Metrics CSV columns: step,l_nce,l_color,l_normal,l_total,neg_cos,feat_std_min
    /// with one row per step. With --resume the run continues from the
    /// checkpoint and rows are appended.
    Pretrain {
        /// Dataset directory of .mscb / .ply scenes
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Metrics CSV
        #[arg(long, value_name = "FILE")]
        metrics: PathBuf,
        /// Checkpoint written at the end of the run
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Checkpoint to resume from
        #[arg(long, value_name = "FILE")]
        resume: Option<PathBuf>,
        /// Total steps; overrides the `steps` key
        #[arg(long)]
        steps: Option<u64>,
    },
    /// View-generation throughput per stage
    ///
    /// CSV columns: size,photometric_ns,spatial_ns,crop_ns,grid_sample_ns,stages_ns,total_ns,repeats
    /// with costs in nanoseconds per input point, averaged over seeded
    /// augmentation draws shared by every size.
    Bench {
        /// Comma-separated cloud sizes
        #[arg(long, value_delimiter = ',', default_value = "10000,100000,1000000")]
        sizes: Vec<usize>,
        /// Output CSV [default: stdout]
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every analytic gradient
    ///
    /// Report columns: block,max_rel_err,checked,skipped,status
    Gradcheck {
        /// Number of consecutive seeds starting at --seed
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        /// Finite-difference step
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        /// Corrupt the analytic gradient of this block (self-test)
        #[arg(long, hide = true, value_name = "BLOCK")]
        perturb: Option<String>,
    },
}
