//! `regmeter` — drives the smart-meter emulation end to end: synthesize load
//! scenarios into ADC sample streams, fit and evaluate the current
//! calibration, run the metering loop with either conversion path, bill
//! consumption against block tariffs, encode/decode telemetry frames, and
//! run the head-end collector.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use regmeter::adc::{
    self, quantize, simulate_analog, Scenario, SensorModel, WaveformSpec, SAMPLES_CSV_HEADER,
};
use regmeter::amr::{write_frame, Collector, MeterFrame};
use regmeter::calibration::{
    self, error_report, CalibrationModel, CurrentConverter, NOMINAL_SENSITIVITY,
};
use regmeter::metering::{
    self, ChannelConfig, MeterState, OffsetMode, DEFAULT_WINDOW_LEN,
};
use regmeter::nvstore::{EnergyRegister, WritePolicy};
use regmeter::runner::{self, windows_from_rows};
use regmeter::tariff::{bill_itemized, dr_status, BillingMode, TariffSchedule};

#[derive(Parser)]
#[command(
    name = "regmeter",
    version,
    about = "Single-phase smart energy meter emulation: simulation, calibration, metering, billing, and telemetry collection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a load scenario into an ADC sample CSV
    Simulate(SimulateArgs),
    /// Fit or evaluate the sensor-volts to amps calibration
    Calibrate {
        #[command(subcommand)]
        command: CalibrateCommand,
    },
    /// Run the metering loop over a sample CSV
    Meter {
        #[command(subcommand)]
        command: MeterCommand,
    },
    /// Meter the same samples with and without regression and compare
    Compare(CompareArgs),
    /// Price a period's consumption against a block-rate schedule
    Bill(BillArgs),
    /// Demand-response status for a cumulative consumption
    DrStatus(DrStatusArgs),
    /// Project a five-minute energy figure to a 31-day month
    Project(ProjectArgs),
    /// Encode or decode a single telemetry frame
    Frame {
        #[command(subcommand)]
        command: FrameCommand,
    },
    /// Collect framed telemetry from meters into per-meter logs
    Collect(CollectArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Preset (type-a, type-b, quadrature, idle) or path to a scenario JSON
    #[arg(long, default_value = "type-a")]
    scenario: String,
    /// Target RMS load current in amps (presets only)
    #[arg(long, default_value_t = 5.0)]
    irms: f64,
    /// RMS mains voltage in volts (presets only)
    #[arg(long, default_value_t = 230.0)]
    vrms: f64,
    /// Fundamental frequency in hertz (presets only)
    #[arg(long, default_value_t = 50.0)]
    frequency: f64,
    /// Current sensor model for presets: ideal or nonlinear
    #[arg(long, default_value = "ideal")]
    sensor: String,
    /// Duration to synthesize, in minutes
    #[arg(long, default_value_t = 5.0)]
    minutes: f64,
    /// Exact sample count; overrides --minutes
    #[arg(long)]
    samples: Option<u64>,
    /// Keep every Nth sample: the stream is synthesized at N x 100 us
    #[arg(long, default_value_t = 1)]
    decimate: u32,
    /// Gaussian noise on both ADC channels, standard deviation in millivolts
    #[arg(long, default_value_t = 0.0)]
    noise_mv: f64,
    /// Noise generator seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Mains volts per ADC volt on the voltage channel (presets only)
    #[arg(long, default_value_t = metering::DEFAULT_VOLTAGE_GAIN)]
    v_gain: f64,
    /// Voltage channel dc offset at the ADC, volts (presets only)
    #[arg(long, default_value_t = adc::DEFAULT_DC_OFFSET_VOLTS)]
    v_offset: f64,
    /// Output sample CSV path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum CalibrateCommand {
    /// Least-squares fit of a polynomial to a training CSV
    Fit {
        /// Training CSV with header `sensor_volts,ref_amps`
        #[arg(long)]
        training: PathBuf,
        /// Polynomial degree
        #[arg(long, default_value_t = calibration::DEFAULT_DEGREE)]
        degree: usize,
        /// Write the fitted model JSON here (stdout if omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a fitted model at a point or against a test CSV
    Eval {
        /// Fitted model JSON
        #[arg(long)]
        model: PathBuf,
        /// Sensor output voltage to convert
        #[arg(long, conflicts_with = "test")]
        x: Option<f64>,
        /// Test CSV; prints an error report against the fixed baseline
        #[arg(long)]
        test: Option<PathBuf>,
        /// Fixed sensitivity baseline, volts per amp
        #[arg(long, default_value_t = NOMINAL_SENSITIVITY)]
        fixed_sensitivity: f64,
    },
}

#[derive(Subcommand)]
enum MeterCommand {
    /// Process a sample CSV through the metering loop
    Run(MeterRunArgs),
}

#[derive(Args)]
struct MeterRunArgs {
    /// Input sample CSV
    #[arg(long)]
    samples: PathBuf,
    /// Fitted calibration model JSON for the regression path
    #[arg(long, conflicts_with = "no_regression")]
    model: Option<PathBuf>,
    /// Use the fixed datasheet sensitivity instead of a fitted model
    #[arg(long)]
    no_regression: bool,
    /// Sensitivity for the fixed path, volts per amp
    #[arg(long, default_value_t = NOMINAL_SENSITIVITY)]
    fixed_sensitivity: f64,
    /// Mains volts per ADC volt on the voltage channel
    #[arg(long, default_value_t = metering::DEFAULT_VOLTAGE_GAIN)]
    v_gain: f64,
    /// Subtract this fixed voltage-channel offset instead of the window mean
    #[arg(long)]
    v_offset_volts: Option<f64>,
    /// Subtract this fixed current-channel offset instead of the window mean
    #[arg(long)]
    i_offset_volts: Option<f64>,
    /// Zero-current deadband in amps
    #[arg(long, default_value_t = metering::DEFAULT_ZERO_CURRENT_THRESHOLD)]
    threshold: f64,
    /// Samples per metering window
    #[arg(long, default_value_t = DEFAULT_WINDOW_LEN)]
    window: usize,
    /// Energy register file; loads prior energy and persists per window
    #[arg(long)]
    state: Option<PathBuf>,
    /// Batch register writes until the energy has grown by this many Wh
    #[arg(long, requires = "state")]
    min_delta: Option<f64>,
    /// Per-window measurement log CSV
    #[arg(long)]
    log: Option<PathBuf>,
    /// Write length-prefixed telemetry frames here, one per window
    #[arg(long)]
    emit_frames: Option<PathBuf>,
    /// Meter identity for emitted frames
    #[arg(long, default_value_t = 1)]
    meter_id: u32,
    /// Frame timestamp base, seconds
    #[arg(long, default_value_t = 0)]
    start_ts: u64,
    /// Tariff schedule JSON for demand-response flags
    #[arg(long)]
    schedule: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Input sample CSV
    #[arg(long)]
    samples: PathBuf,
    /// Fitted calibration model JSON
    #[arg(long)]
    model: PathBuf,
    /// Sensitivity for the fixed path, volts per amp
    #[arg(long, default_value_t = NOMINAL_SENSITIVITY)]
    fixed_sensitivity: f64,
    /// Mains volts per ADC volt on the voltage channel
    #[arg(long, default_value_t = metering::DEFAULT_VOLTAGE_GAIN)]
    v_gain: f64,
    /// Samples per metering window
    #[arg(long, default_value_t = DEFAULT_WINDOW_LEN)]
    window: usize,
}

#[derive(Args)]
struct BillArgs {
    /// Units (kWh) consumed in the billing period
    #[arg(long, allow_negative_numbers = true)]
    units: f64,
    /// Tariff schedule JSON
    #[arg(long)]
    schedule: PathBuf,
    /// Override the schedule's billing mode
    #[arg(long, value_parser = parse_mode)]
    mode: Option<BillingMode>,
}

#[derive(Args)]
struct DrStatusArgs {
    /// Cumulative units (kWh)
    #[arg(long, allow_negative_numbers = true)]
    units: f64,
    /// Tariff schedule JSON
    #[arg(long)]
    schedule: PathBuf,
}

#[derive(Args)]
struct ProjectArgs {
    /// Energy over five minutes, watt-hours
    #[arg(long, allow_negative_numbers = true)]
    wh_5min: f64,
}

#[derive(Subcommand)]
enum FrameCommand {
    /// Build a frame from field values
    Encode(FrameEncodeArgs),
    /// Decode and validate a frame
    Decode(FrameDecodeArgs),
}

#[derive(Args)]
struct FrameEncodeArgs {
    #[arg(long)]
    meter_id: u32,
    #[arg(long, default_value_t = 0)]
    timestamp: u64,
    #[arg(long, default_value_t = 0)]
    vrms_mv: u32,
    #[arg(long, default_value_t = 0)]
    irms_ma: u32,
    #[arg(long, default_value_t = 0)]
    p_mw: u32,
    #[arg(long, default_value_t = 0)]
    s_mva: u32,
    /// Power factor scaled by 10^4 (0..=10000)
    #[arg(long, default_value_t = 0)]
    pf_scaled: u16,
    #[arg(long, default_value_t = 0)]
    energy_mwh: u64,
    /// 0 normal, 1 warning, 2 crossed
    #[arg(long, default_value_t = 0)]
    dr_flag: u8,
    /// Write the raw 44 bytes here instead of printing hex
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct FrameDecodeArgs {
    /// Frame bytes as a hex string
    #[arg(long)]
    hex: Option<String>,
    /// File holding the raw frame bytes
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Args)]
struct CollectArgs {
    /// Listen for meter connections on this address (host:port)
    #[arg(long, conflicts_with = "input")]
    listen: Option<String>,
    /// Ingest a length-prefixed frame file instead of listening
    #[arg(long)]
    input: Option<PathBuf>,
    /// Directory for per-meter record logs
    #[arg(long)]
    log_dir: PathBuf,
}

fn parse_mode(s: &str) -> Result<BillingMode, String> {
    match s {
        "telescopic" => Ok(BillingMode::Telescopic),
        "flat-slab" => Ok(BillingMode::FlatSlab),
        other => Err(format!("unknown mode `{other}` (telescopic, flat-slab)")),
    }
}

fn main() -> std::process::ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("REGMETER_LOG")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Calibrate { command } => calibrate(command),
        Command::Meter {
            command: MeterCommand::Run(args),
        } => meter_run(args),
        Command::Compare(args) => compare(args),
        Command::Bill(args) => bill_cmd(args),
        Command::DrStatus(args) => dr_status_cmd(args),
        Command::Project(args) => project(args),
        Command::Frame { command } => frame(command),
        Command::Collect(args) => collect(args),
    }
}

// ---------------------------------------------------------------------------
// simulate

fn preset_scenario(args: &SimulateArgs) -> Result<Scenario> {
    let sensor = match args.sensor.as_str() {
        "ideal" => SensorModel::ideal(),
        "nonlinear" => SensorModel::reference_nonlinear(),
        other => bail!("unknown sensor `{other}` (ideal, nonlinear)"),
    };
    let voltage = WaveformSpec::sine(args.frequency, args.vrms * std::f64::consts::SQRT_2);
    let current = match args.scenario.as_str() {
        "type-a" => WaveformSpec::sine(args.frequency, args.irms * std::f64::consts::SQRT_2),
        // A displaced fundamental plus low-order odd harmonics: the mixed
        // resistive/electronic load class.
        "type-b" => WaveformSpec {
            fundamental_hz: args.frequency,
            components: vec![
                adc::Harmonic {
                    order: 1,
                    amplitude: 1.0,
                    phase: 0.0,
                },
                adc::Harmonic {
                    order: 1,
                    amplitude: 0.8,
                    phase: -std::f64::consts::FRAC_PI_3,
                },
                adc::Harmonic {
                    order: 3,
                    amplitude: 0.25,
                    phase: std::f64::consts::PI,
                },
                adc::Harmonic {
                    order: 5,
                    amplitude: 0.12,
                    phase: 0.0,
                },
            ],
        }
        .scaled_to_rms(args.irms)?,
        "quadrature" => {
            let mut spec = WaveformSpec::sine(args.frequency, args.irms * std::f64::consts::SQRT_2);
            spec.components[0].phase = -std::f64::consts::FRAC_PI_2;
            spec
        }
        "idle" => WaveformSpec {
            fundamental_hz: args.frequency,
            components: vec![],
        },
        other => bail!("unknown scenario `{other}` (type-a, type-b, quadrature, idle, or a JSON path)"),
    };
    Ok(Scenario {
        voltage,
        current,
        sensor,
        v_gain: args.v_gain,
        v_offset: args.v_offset,
    })
}

fn resolve_scenario(args: &SimulateArgs) -> Result<Scenario> {
    let as_path = Path::new(&args.scenario);
    if as_path.extension().is_some_and(|e| e == "json") || as_path.is_file() {
        let bytes = std::fs::read(as_path)
            .with_context(|| format!("reading scenario {}", as_path.display()))?;
        return Ok(Scenario::from_json(&bytes)?);
    }
    preset_scenario(args)
}

/// Deterministic Gaussian stream (Box-Muller over a seeded generator).
struct NoiseSource {
    rng: ChaCha8Rng,
    std_dev: f64,
    spare: Option<f64>,
}

impl NoiseSource {
    fn new(seed: u64, std_dev: f64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            std_dev,
            spare: None,
        }
    }

    fn next(&mut self) -> f64 {
        if self.std_dev == 0.0 {
            return 0.0;
        }
        if let Some(z) = self.spare.take() {
            return z * self.std_dev;
        }
        let u1: f64 = self.rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = self.rng.gen_range(0.0..1.0);
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos() * self.std_dev
    }
}

/// The waveform as seen `t0` seconds in: each component's phase advances by
/// its own angular rate, so long streams can be synthesized chunk by chunk.
fn shifted_by(spec: &WaveformSpec, t0_seconds: f64) -> WaveformSpec {
    let omega = 2.0 * std::f64::consts::PI * spec.fundamental_hz;
    let mut out = spec.clone();
    for c in &mut out.components {
        c.phase += omega * f64::from(c.order) * t0_seconds;
    }
    out
}

fn simulate(args: SimulateArgs) -> Result<()> {
    if args.decimate == 0 {
        bail!("--decimate must be at least 1");
    }
    let scenario = resolve_scenario(&args)?;
    let period_us = adc::DEFAULT_SAMPLE_PERIOD_US * f64::from(args.decimate);
    let total: u64 = match args.samples {
        Some(samples) => samples,
        None => {
            if !args.minutes.is_finite() || args.minutes <= 0.0 {
                bail!("--minutes must be positive");
            }
            (args.minutes * 60.0 * 1e6 / period_us).round() as u64
        }
    };
    if total == 0 {
        bail!("nothing to synthesize: zero samples");
    }

    let file = File::create(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let mut writer = BufWriter::new(file);
    writeln!(writer, "{SAMPLES_CSV_HEADER}")?;

    let mut v_noise = NoiseSource::new(args.seed, args.noise_mv * 1e-3);
    let mut i_noise = NoiseSource::new(args.seed.wrapping_add(1), args.noise_mv * 1e-3);

    const CHUNK: u64 = 200_000;
    let mut written: u64 = 0;
    while written < total {
        let n = CHUNK.min(total - written) as usize;
        let t0 = written as f64 * period_us * 1e-6;
        let chunk_scenario = Scenario {
            voltage: shifted_by(&scenario.voltage, t0),
            current: shifted_by(&scenario.current, t0),
            ..scenario.clone()
        };
        let analog = simulate_analog(&chunk_scenario, n, period_us)?;
        for (offset, (&v, &i)) in analog
            .v_adc_volts
            .iter()
            .zip(&analog.i_adc_volts)
            .enumerate()
        {
            let index = written + offset as u64;
            writeln!(
                writer,
                "{},{},{},{}",
                index,
                quantize(v + v_noise.next()),
                quantize(i + i_noise.next()),
                period_us
            )?;
        }
        written += n as u64;
    }
    writer.flush()?;
    println!(
        "wrote {} samples at {} us/sample to {}",
        total,
        period_us,
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// calibrate

fn calibrate(command: CalibrateCommand) -> Result<()> {
    match command {
        CalibrateCommand::Fit {
            training,
            degree,
            out,
        } => {
            let file = File::open(&training)
                .with_context(|| format!("opening {}", training.display()))?;
            let set = calibration::read_training_csv(BufReader::new(file))?;
            let model = calibration::fit(&set, degree)?;
            let json = model.to_json()?;
            match out {
                Some(path) => {
                    std::fs::write(&path, &json)
                        .with_context(|| format!("writing {}", path.display()))?;
                    println!("fitted degree {} model over {} pairs", model.degree, set.len());
                    println!("coefficients (descending powers): {:?}", model.coefficients);
                    println!(
                        "fit rmse {:.6} A, max error {:.6} A -> {}",
                        model.fit_rmse,
                        model.fit_max_error,
                        path.display()
                    );
                }
                None => println!("{json}"),
            }
            Ok(())
        }
        CalibrateCommand::Eval {
            model,
            x,
            test,
            fixed_sensitivity,
        } => {
            let bytes =
                std::fs::read(&model).with_context(|| format!("reading {}", model.display()))?;
            let model = CalibrationModel::from_json(&bytes)?;
            if let Some(x) = x {
                println!("{}", model.apply(x));
                return Ok(());
            }
            let test = test.context("pass --x or --test")?;
            let file =
                File::open(&test).with_context(|| format!("opening {}", test.display()))?;
            let set = calibration::read_training_csv(BufReader::new(file))?;
            let fixed = error_report(&CurrentConverter::fixed(fixed_sensitivity)?, &set)?;
            let fitted = error_report(&CurrentConverter::regression(model), &set)?;
            println!(
                "{:<24} {:>14} {:>14}",
                "", "fixed", "regression"
            );
            println!(
                "{:<24} {:>14.6} {:>14.6}",
                "max |error| (A)", fixed.max_abs_error, fitted.max_abs_error
            );
            println!(
                "{:<24} {:>14.6} {:>14.6}",
                "rmse (A)", fixed.rmse, fitted.rmse
            );
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// meter run / compare

fn load_samples(path: &Path) -> Result<Vec<adc::SampleRow>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(adc::read_samples_csv(BufReader::new(file))?)
}

fn load_schedule(path: &Path) -> Result<TariffSchedule> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(TariffSchedule::from_json(&bytes)?)
}

fn channel_config(
    v_gain: f64,
    v_offset_volts: Option<f64>,
    i_offset_volts: Option<f64>,
    threshold: f64,
) -> ChannelConfig {
    ChannelConfig {
        v_gain,
        v_offset_mode: v_offset_volts.map_or(OffsetMode::WindowMean, OffsetMode::Fixed),
        i_offset_mode: i_offset_volts.map_or(OffsetMode::WindowMean, OffsetMode::Fixed),
        zero_current_threshold: threshold,
    }
}

fn meter_run(args: MeterRunArgs) -> Result<()> {
    let rows = load_samples(&args.samples)?;
    let windows = windows_from_rows(&rows, args.window)?;
    let converter = match (&args.model, args.no_regression) {
        (Some(path), false) => {
            let bytes =
                std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            CurrentConverter::regression(CalibrationModel::from_json(&bytes)?)
        }
        (None, _) => CurrentConverter::fixed(args.fixed_sensitivity)?,
        (Some(_), true) => unreachable!("clap rejects the combination"),
    };
    let cfg = channel_config(
        args.v_gain,
        args.v_offset_volts,
        args.i_offset_volts,
        args.threshold,
    );

    let mut register = match &args.state {
        Some(path) => {
            let policy = match args.min_delta {
                Some(watt_hours) => WritePolicy::MinDelta { watt_hours },
                None => WritePolicy::EveryWindow,
            };
            Some(EnergyRegister::open(path, policy)?)
        }
        None => None,
    };
    let initial = match &register {
        Some(register) => MeterState::new(register.cached()),
        None => MeterState::default(),
    };

    let run = runner::run_metering(&windows, &cfg, &converter, initial, register.as_mut())?;

    if let Some(path) = &args.log {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut writer = BufWriter::new(file);
        metering::write_measurement_header(&mut writer)?;
        for step in &run.steps {
            metering::write_measurement_row(
                &mut writer,
                step.state.elapsed_hours,
                &step.measurements,
                step.state.energy_wh,
            )?;
        }
        writer.flush()?;
    }

    let schedule = args.schedule.as_deref().map(load_schedule).transpose()?;
    if let Some(path) = &args.emit_frames {
        let frames = runner::frames_for_run(args.meter_id, args.start_ts, &run, schedule.as_ref())?;
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut writer = BufWriter::new(file);
        for frame in &frames {
            write_frame(&mut writer, frame)?;
        }
        writer.flush()?;
    }

    println!(
        "processed {} windows covering {:.6} h",
        run.steps.len(),
        run.final_state.elapsed_hours - initial.elapsed_hours
    );
    if let Some(last) = run.steps.last() {
        let pf = last
            .measurements
            .power_factor
            .map_or_else(|| "undefined".into(), |pf| format!("{pf:.4}"));
        println!(
            "last window: v_rms {:.3} V, i_rms {:.4} A, p {:.3} W, s {:.3} VA, pf {}",
            last.measurements.v_rms,
            last.measurements.i_rms,
            last.measurements.active_power,
            last.measurements.apparent_power,
            pf
        );
    }
    println!("energy {:.6} Wh", run.final_state.energy_wh);
    if let Some(schedule) = &schedule {
        let status = dr_status(run.final_state.energy_wh / 1000.0, schedule)?;
        println!("dr-status {status}");
    }
    Ok(())
}

fn compare(args: CompareArgs) -> Result<()> {
    let rows = load_samples(&args.samples)?;
    let windows = windows_from_rows(&rows, args.window)?;
    let bytes =
        std::fs::read(&args.model).with_context(|| format!("reading {}", args.model.display()))?;
    let model = CalibrationModel::from_json(&bytes)?;
    let cfg = ChannelConfig {
        v_gain: args.v_gain,
        ..ChannelConfig::default()
    };
    let report = runner::compare_runs(&windows, &cfg, args.fixed_sensitivity, model)?;
    println!("{report}");
    Ok(())
}

// ---------------------------------------------------------------------------
// tariff commands

fn bill_cmd(args: BillArgs) -> Result<()> {
    let mut schedule = load_schedule(&args.schedule)?;
    if let Some(mode) = args.mode {
        schedule.mode = mode;
    }
    let itemized = bill_itemized(args.units, &schedule)?;
    println!("{:<18} {:>12} {:>10} {:>12}", "block", "units", "rate", "charge");
    for line in &itemized.lines {
        let block = match line.block_end {
            Some(end) => format!("{}-{}", line.block_start, end),
            None => format!("{}+", line.block_start),
        };
        println!(
            "{:<18} {:>12.3} {:>10} {:>12}",
            block,
            line.units,
            line.rate.to_string(),
            line.charge.to_string()
        );
    }
    println!(
        "{:<18} {:>12} {:>10} {:>12}",
        "total",
        "",
        "",
        itemized.total.to_string()
    );
    Ok(())
}

fn dr_status_cmd(args: DrStatusArgs) -> Result<()> {
    let schedule = load_schedule(&args.schedule)?;
    println!("{}", dr_status(args.units, &schedule)?);
    Ok(())
}

fn project(args: ProjectArgs) -> Result<()> {
    println!("{:.2}", metering::project_monthly(args.wh_5min)?);
    Ok(())
}

// ---------------------------------------------------------------------------
// frame commands

fn hex_encode(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn hex_decode(text: &str) -> Result<Vec<u8>> {
    let text: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    if !text.len().is_multiple_of(2) {
        bail!("hex string has odd length {}", text.len());
    }
    (0..text.len())
        .step_by(2)
        .map(|k| {
            u8::from_str_radix(&text[k..k + 2], 16)
                .with_context(|| format!("invalid hex at offset {k}"))
        })
        .collect()
}

fn frame(command: FrameCommand) -> Result<()> {
    match command {
        FrameCommand::Encode(args) => {
            let frame = MeterFrame {
                meter_id: args.meter_id,
                timestamp: args.timestamp,
                v_rms_mv: args.vrms_mv,
                i_rms_ma: args.irms_ma,
                p_mw: args.p_mw,
                s_mva: args.s_mva,
                pf_scaled: args.pf_scaled,
                energy_mwh: args.energy_mwh,
                dr_flag: args.dr_flag,
            };
            let bytes = frame.encode()?;
            match args.out {
                Some(path) => std::fs::write(&path, bytes)
                    .with_context(|| format!("writing {}", path.display()))?,
                None => println!("{}", hex_encode(&bytes)),
            }
            Ok(())
        }
        FrameCommand::Decode(args) => {
            let bytes = match (&args.hex, &args.input) {
                (Some(hex), None) => hex_decode(hex)?,
                (None, Some(path)) => std::fs::read(path)
                    .with_context(|| format!("reading {}", path.display()))?,
                _ => unreachable!("clap enforces exactly one source"),
            };
            let frame = MeterFrame::decode(&bytes)?;
            println!("{}", serde_json::to_string_pretty(&frame)?);
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// collect

fn collect(args: CollectArgs) -> Result<()> {
    let collector = Arc::new(Collector::new(&args.log_dir)?);
    match (args.listen, args.input) {
        (Some(addr), None) => {
            let listener =
                TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
            println!("listening on {addr}, logging to {}", args.log_dir.display());
            collector.serve(listener)?;
            Ok(())
        }
        (None, Some(path)) => {
            let stats = collector.ingest_file(&path)?;
            let meters = collector.snapshot_table().len();
            println!(
                "accepted {} rejected {} flagged {} meters {}",
                stats.accepted, stats.rejected, stats.flagged, meters
            );
            Ok(())
        }
        (None, None) => bail!("pass --listen <addr> or --input <file>"),
        (Some(_), Some(_)) => unreachable!("clap rejects the combination"),
    }
}
