//! One module per subcommand family.

/// Calls `$f::<f32>` or `$f::<f64>` according to the run precision.
macro_rules! with_precision {
    ($settings:expr, $f:ident($($arg:expr),*)) => {
        match $settings.precision()? {
            $crate::settings::Precision::F32 => $f::<f32>($($arg),*),
            $crate::settings::Precision::F64 => $f::<f64>($($arg),*),
        }
    };
}

mod report;
mod synth;
mod train;

pub use report::{
    bench_scaling, grad_check, param_report, BenchArgs, GradCheckArgs, ParamReportArgs,
};
pub use synth::{synth_data, SynthArgs};
pub use train::{eval, train, EvalArgs, TrainArgs};
