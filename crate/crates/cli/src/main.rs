use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tilens_core::cli_io::{parse_config, parse_config_partial, run_scenario, Command, RunConfig, RunError};

#[derive(Parser)]
#[command(name = "tilens", version, about = "Lens data, pseudo-linearization and recovery for transversely isotropic media")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Base run configuration; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// RNG seed, at most 2^63 - 1 so that it fits a config file integer.
    #[arg(long, value_parser = clap::value_parser!(u64).range(..=i64::MAX as u64))]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Primary output file name (inside the output directory).
    #[arg(long)]
    out: Option<String>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario described entirely by a configuration file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        print_config: bool,
    },
    /// Trace rays to the boundary and write lens data.
    Forward {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        /// CSV of entry points and covectors (x1,x2,x3,xi1,xi2,xi3); random rays otherwise.
        #[arg(long)]
        rays: Option<PathBuf>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        n_rays: Option<usize>,
        #[arg(long)]
        ode_tol: Option<f64>,
    },
    /// Compare traced exit covectors with ones recovered from travel-time tables.
    Lens {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        /// CSV of boundary point pairs (x0 then x1); random pairs otherwise.
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        n_rays: Option<usize>,
        #[arg(long)]
        spacing: Option<f64>,
    },
    /// Apply the pseudo-linearization operator to a field.
    Pseudo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        pert: Option<PathBuf>,
        #[arg(long)]
        nu: Option<String>,
        #[arg(long)]
        field: Option<PathBuf>,
        /// Use the variant acting on scalar functions of x only.
        #[arg(long)]
        tilde: bool,
        /// Also check the pseudo-data identity on these rays.
        #[arg(long)]
        rays: Option<PathBuf>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        profile: Option<String>,
        /// exact or background Jacobians.
        #[arg(long)]
        source: Option<String>,
        #[arg(long)]
        sphere_n_s: Option<usize>,
        #[arg(long)]
        sphere_n_phi: Option<usize>,
    },
    /// Probe the operator symbol and compare with the principal prediction.
    SymbolCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        pert: Option<PathBuf>,
        #[arg(long)]
        nu: Option<String>,
        #[arg(long)]
        mode: Option<String>,
        /// Base point, as x,y,z.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Option<Vec<f64>>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        profile: Option<String>,
    },
    /// Membership and parametrix checks for parabolic symbols.
    ParabolicCheck {
        #[command(flatten)]
        common: Common,
        /// heat, ne2 or custom.
        #[arg(long)]
        case: Option<String>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Principal part, in x (position), y = zeta1, z = zeta2.
        #[arg(long)]
        pm: Option<String>,
        #[arg(long)]
        pm1: Option<String>,
        #[arg(long)]
        m: Option<f64>,
    },
    /// Poincaré and interpolation ratios for a compactly supported field.
    Poincare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        field: Option<PathBuf>,
        #[arg(long)]
        width: Option<f64>,
    },
    /// Support width of a field.
    Width {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        field: Option<PathBuf>,
        /// Support threshold relative to max |u|.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        n_rot: Option<usize>,
    },
    /// Synthesize data from a true perturbation and recover it.
    Invert {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Parameter differences (a11, a33, E2) of the true model.
        #[arg(long)]
        true_pert: Option<PathBuf>,
        /// one:<param>:<mode>, two:<p>,<q> or func:<param>:<f1>,<f2>,<f3>.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        report: Option<String>,
        #[arg(long)]
        zero_data_check: bool,
    },
    /// Check the flow-perturbation integral identity along random rays.
    SuCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        pert: Option<PathBuf>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        n_pairs: Option<usize>,
        #[arg(long)]
        t: Option<f64>,
    },
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

fn base(command: Command, common: &Common) -> Result<RunConfig, RunError> {
    let mut cfg = match &common.config {
        Some(p) => {
            let mut c = parse_config_partial(p)?;
            if c.run.command != command {
                c.run.output = RunConfig::new(command).run.output;
            }
            c.run.command = command;
            c
        }
        None => RunConfig::new(command),
    };
    set(&mut cfg.run.seed, common.seed);
    set(&mut cfg.run.output_dir, common.output_dir.clone());
    set(&mut cfg.run.output, common.out.clone());
    Ok(cfg)
}

fn build(cli: Cli) -> Result<(RunConfig, bool), RunError> {
    Ok(match cli.cmd {
        Cmd::Run { config, print_config } => (parse_config(&config)?, print_config),
        Cmd::Forward { common, model, rays, mode, n_rays, ode_tol } => {
            let mut c = base(Command::Forward, &common)?;
            set_opt(&mut c.model.base, model);
            set_opt(&mut c.model.rays, rays);
            set(&mut c.raytracer.mode, mode);
            set(&mut c.raytracer.n_rays, n_rays);
            set(&mut c.raytracer.ode_tol, ode_tol);
            (c, common.print_config)
        }
        Cmd::Lens { common, model, pairs, mode, n_rays, spacing } => {
            let mut c = base(Command::Lens, &common)?;
            set_opt(&mut c.model.base, model);
            set_opt(&mut c.model.rays, pairs);
            set(&mut c.raytracer.mode, mode);
            set(&mut c.raytracer.n_rays, n_rays);
            set(&mut c.raytracer.table_spacing, spacing);
            (c, common.print_config)
        }
        Cmd::Pseudo { common, model, pert, nu, field, tilde, rays, mode, eps, profile, source, sphere_n_s, sphere_n_phi } => {
            let mut c = base(Command::Pseudo, &common)?;
            set_opt(&mut c.model.base, model);
            set_opt(&mut c.model.pert, pert);
            set_opt(&mut c.model.field, field);
            set_opt(&mut c.model.rays, rays);
            set(&mut c.pseudolin.nu, nu);
            set(&mut c.raytracer.mode, mode);
            set(&mut c.pseudolin.eps, eps);
            set(&mut c.pseudolin.profile, profile);
            set(&mut c.pseudolin.source, source);
            set(&mut c.pseudolin.sphere_n_s, sphere_n_s);
            set(&mut c.pseudolin.sphere_n_phi, sphere_n_phi);
            c.pseudolin.tilde |= tilde;
            (c, common.print_config)
        }
        Cmd::SymbolCheck { common, model, pert, nu, mode, x, eps, profile } => {
            let mut c = base(Command::SymbolCheck, &common)?;
            set_opt(&mut c.model.base, model);
            set_opt(&mut c.model.pert, pert);
            set(&mut c.pseudolin.nu, nu);
            set(&mut c.raytracer.mode, mode);
            if let Some(v) = x {
                if v.len() != 3 {
                    return Err(RunError::Validation(vec![format!("--x: expected 3 comma-separated coordinates, got {}", v.len())]));
                }
                c.symbols.x = [v[0], v[1], v[2]];
            }
            set(&mut c.pseudolin.eps, eps);
            set(&mut c.pseudolin.profile, profile);
            (c, common.print_config)
        }
        Cmd::ParabolicCheck { common, case, model, pm, pm1, m } => {
            let mut c = base(Command::ParabolicCheck, &common)?;
            set(&mut c.parabolic_calc.case, case);
            set_opt(&mut c.model.base, model);
            set_opt(&mut c.parabolic_calc.pm, pm);
            set_opt(&mut c.parabolic_calc.pm1, pm1);
            set(&mut c.parabolic_calc.m, m);
            (c, common.print_config)
        }
        Cmd::Poincare { common, field, width } => {
            let mut c = base(Command::Poincare, &common)?;
            set_opt(&mut c.model.field, field);
            set_opt(&mut c.inversion.width, width);
            (c, common.print_config)
        }
        Cmd::Width { common, field, threshold, n_rot } => {
            let mut c = base(Command::Width, &common)?;
            set_opt(&mut c.model.field, field);
            set(&mut c.inversion.threshold, threshold);
            set(&mut c.inversion.n_rot, n_rot);
            (c, common.print_config)
        }
        Cmd::Invert { common, model, true_pert, scenario, grid, lambda, report, zero_data_check } => {
            let mut c = base(Command::Invert, &common)?;
            set_opt(&mut c.model.base, model);
            set_opt(&mut c.model.pert, true_pert);
            set(&mut c.inversion.scenario, scenario);
            set(&mut c.inversion.grid, grid);
            set_opt(&mut c.inversion.lambda_reg, lambda);
            set_opt(&mut c.run.report, report);
            c.inversion.zero_data_check |= zero_data_check;
            (c, common.print_config)
        }
        Cmd::SuCheck { common, model, pert, mode, n_pairs, t } => {
            let mut c = base(Command::SuCheck, &common)?;
            set_opt(&mut c.model.base, model);
            set_opt(&mut c.model.pert, pert);
            set(&mut c.raytracer.mode, mode);
            set(&mut c.raytracer.n_rays, n_pairs);
            set(&mut c.raytracer.su_time, t);
            (c, common.print_config)
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = build(cli).and_then(|(cfg, print)| {
        if print {
            print!("{}", cfg.echo());
            return Ok(());
        }
        let m = run_scenario(&cfg)?;
        for o in &m.outputs {
            println!("{}  {}", o.sha256, cfg.run.output_dir.join(&o.file).display());
        }
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tilens: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
