//! Command-line front end.
//!
//! Each subcommand writes its primary output (JSON or CSV) to stdout or
//! `--out`, and first prints one JSON line on stderr echoing the effective
//! configuration as an argument list. Domain errors exit with 1 and a JSON
//! object `{"code", "message"}` on stderr; usage errors exit with 2.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::dirichlet::{auto_polygon, polygon_area, to_svg};
use crate::error::{Error, Result};
use crate::fricke::{is_normalized, normalize, reconstruct_equivalence};
use crate::fuchsian::{certified_spectrum, triangle_group, ClassOptions, GroupPresentation, LengthSpectrum, DEFAULT_CENTER};
use crate::huber::{
    default_length_grid, extract_lengths, log_grid, recover_spectrum_from, CFunctionHandle, Convention,
    HeatTraceHandle,
};
use crate::hyperbolic::UHPoint;
use crate::io::F17;
use crate::mp::DEFAULT_PREC;
use crate::orbisurface::{euler_characteristic, hyperbolic_area, obstruction_check, Signature};
use crate::selberg::{geometric_heat_trace, TraceFormulaInput};
use crate::synthetic;

#[derive(Parser, Debug)]
#[command(name = "orbispec", version, about = "Spectral geometry of compact hyperbolic orbisurfaces")]
struct Cli {
    /// Write the primary output to this file instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Euler characteristic, area and Weyl coefficient of a signature.
    Invariants(SignatureArgs),
    /// Elementary isospectrality obstructions between two signatures.
    Obstruct(ObstructArgs),
    /// Generators of the (p, q, r) triangle group.
    Triangle(TriangleArgs),
    /// Length spectrum of a group by word enumeration.
    Lengths(LengthsArgs),
    /// Geometric side of the trace formula for the heat test function.
    TraceFormula(TraceFormulaArgs),
    /// Primitive lengths from a heat-trace remainder.
    HuberExtract(HuberExtractArgs),
    /// Eigenvalues and area from a length spectrum.
    HuberSpectrum(HuberSpectrumArgs),
    /// Dirichlet polygon of a cocompact group.
    Dirichlet(DirichletArgs),
    /// Conjugation witness between two groups with matching traces.
    Fricke(FrickeArgs),
}

#[derive(Args, Debug)]
struct SignatureArgs {
    #[arg(long, default_value_t = 0)]
    genus: u32,
    /// Comma-separated cone orders.
    #[arg(long, value_delimiter = ',')]
    cones: Vec<u32>,
}

#[derive(Args, Debug)]
struct ObstructArgs {
    /// First signature, e.g. `genus=1,cones=2,2`.
    #[arg(long, value_parser = parse_signature)]
    a: Signature,
    #[arg(long, value_parser = parse_signature)]
    b: Signature,
}

#[derive(Args, Debug)]
struct TriangleArgs {
    p: u32,
    q: u32,
    r: u32,
}

#[derive(Args, Debug)]
struct LengthsArgs {
    /// Group JSON file.
    #[arg(long)]
    group: PathBuf,
    #[arg(long, default_value_t = 14)]
    max_word_len: usize,
    #[arg(long, default_value_t = 8.0)]
    max_length: f64,
}

#[derive(Args, Debug)]
struct TraceFormulaArgs {
    #[command(flatten)]
    signature: SignatureArgs,
    /// Length spectrum CSV.
    #[arg(long)]
    spectrum: PathBuf,
    /// Comma-separated values of t.
    #[arg(long, value_delimiter = ',', required = true)]
    t: Vec<f64>,
    /// Defaults to the certified cutoff of the CSV, else its largest length.
    #[arg(long)]
    length_cutoff: Option<f64>,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("source").required(true).args(["csv", "seed"])))]
struct HuberExtractArgs {
    /// Heat-trace samples as `t,f` rows.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Synthetic length spectrum with this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of primitive lengths; defaults to the planted count with `--seed`.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, default_value = "trace-formula")]
    convention: String,
    /// Lengths up to this value are present in the data.
    #[arg(long)]
    cutoff: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("source").required(true).args(["spectrum", "seed"])))]
struct HuberSpectrumArgs {
    /// Length spectrum CSV.
    #[arg(long)]
    spectrum: Option<PathBuf>,
    /// Synthetic spectral data with this seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    cones: Vec<u32>,
    #[arg(long, default_value_t = 5.0)]
    lambda_max: f64,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    #[arg(long, default_value_t = 0.05)]
    t_min: f64,
    #[arg(long, default_value_t = 1500.0)]
    t_max: f64,
    #[arg(long, default_value_t = 400)]
    points: usize,
}

#[derive(Args, Debug)]
struct DirichletArgs {
    /// Group JSON file.
    #[arg(long)]
    group: PathBuf,
    /// Polygon center as `x,y`.
    #[arg(long, value_parser = parse_point)]
    center: Option<UHPoint>,
    /// Also write an SVG drawing here.
    #[arg(long)]
    svg: Option<PathBuf>,
    #[arg(long, default_value_t = 600)]
    svg_size: u32,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("source").required(true).args(["g", "seed"])))]
struct FrickeArgs {
    /// Group JSON file.
    #[arg(long, requires = "h")]
    g: Option<PathBuf>,
    /// Group JSON file.
    #[arg(long, requires = "g")]
    h: Option<PathBuf>,
    /// Synthetic pair related by a diagonal conjugation, possibly reflected.
    #[arg(long, conflicts_with_all = ["g", "h"])]
    seed: Option<u64>,
}

fn parse_signature(s: &str) -> std::result::Result<Signature, String> {
    let mut genus = None;
    let mut cones = Vec::new();
    let mut in_cones = false;
    for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let (key, val) = match tok.split_once('=') {
            Some((k, v)) => (Some(k.trim()), v.trim()),
            None => (None, tok),
        };
        match key {
            Some("genus") => {
                genus = Some(val.parse::<u32>().map_err(|e| format!("genus: {e}"))?);
                in_cones = false;
            }
            Some("cones") => {
                in_cones = true;
                cones.push(val.parse::<u32>().map_err(|e| format!("cones: {e}"))?);
            }
            None if in_cones => cones.push(val.parse::<u32>().map_err(|e| format!("cones: {e}"))?),
            _ => return Err(format!("unexpected {tok:?} (expected genus=G,cones=m1,m2,...)")),
        }
    }
    let genus = genus.ok_or("missing genus=")?;
    Signature::new(genus, cones).map_err(|e| e.to_string())
}

fn parse_point(s: &str) -> std::result::Result<UHPoint, String> {
    let (x, y) = s.split_once(',').ok_or("expected x,y")?;
    let x = x.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let y = y.trim().parse::<f64>().map_err(|e| e.to_string())?;
    UHPoint::new(x, y).map_err(|e| e.to_string())
}

fn signature_arg(s: &Signature) -> String {
    if s.has_cones() {
        format!("genus={},cones={}", s.genus, join(s.cone_orders()))
    } else {
        format!("genus={}", s.genus)
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn path_arg(p: &Path) -> String {
    p.display().to_string()
}

fn read(p: &Path) -> Result<String> {
    Ok(std::fs::read_to_string(p)?)
}

fn read_group(p: &Path) -> Result<GroupPresentation> {
    GroupPresentation::from_json(&read(p)?)
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string(v).expect("serializable");
    s.push('\n');
    s
}

// Effective flags with defaults filled in; for the runs that resolve a value
// from their input, the resolved value.
struct Echo(Vec<String>);

impl Echo {
    fn new(sub: &str) -> Self {
        Echo(vec![sub.to_string()])
    }

    fn flag(&mut self, name: &str, value: impl ToString) -> &mut Self {
        self.0.push(format!("--{name}"));
        self.0.push(value.to_string());
        self
    }

    fn pos(&mut self, value: impl ToString) -> &mut Self {
        self.0.push(value.to_string());
        self
    }

    fn signature(&mut self, a: &SignatureArgs) -> &mut Self {
        self.flag("genus", a.genus);
        if !a.cones.is_empty() {
            self.flag("cones", join(&a.cones));
        }
        self
    }
}

// Runs the command; `echo` is emitted before the work starts.
fn execute(cmd: &Command, emit: &mut dyn FnMut(&Echo)) -> Result<(String, Vec<(PathBuf, String)>)> {
    let mut side_files = Vec::new();
    let out = match cmd {
        Command::Invariants(a) => {
            emit(Echo::new("invariants").signature(a));
            let sig = Signature::new(a.genus, a.cones.clone())?;
            let chi = euler_characteristic(&sig);
            let area = hyperbolic_area(&sig)?;
            to_json(&json!({
                "signature": sig,
                "chi": chi.to_string(),
                "area": F17(area),
                "weyl_coefficient": F17(area / (4.0 * std::f64::consts::PI)),
            }))
        }
        Command::Obstruct(a) => {
            emit(Echo::new("obstruct").flag("a", signature_arg(&a.a)).flag("b", signature_arg(&a.b)));
            to_json(&obstruction_check(&a.a, &a.b)?)
        }
        Command::Triangle(a) => {
            emit(Echo::new("triangle").pos(a.p).pos(a.q).pos(a.r));
            let mut s = triangle_group(a.p, a.q, a.r)?.to_json();
            s.push('\n');
            s
        }
        Command::Lengths(a) => {
            emit(
                Echo::new("lengths")
                    .flag("group", path_arg(&a.group))
                    .flag("max-word-len", a.max_word_len)
                    .flag("max-length", a.max_length),
            );
            let g = read_group(&a.group)?;
            certified_spectrum(&g, a.max_word_len, a.max_length, &ClassOptions::default())?.to_csv()
        }
        Command::TraceFormula(a) => {
            let spectrum = LengthSpectrum::from_csv(&read(&a.spectrum)?)?;
            let cutoff = a
                .length_cutoff
                .or(spectrum.certified_cutoff)
                .unwrap_or_else(|| spectrum.entries.iter().map(|e| e.length).fold(0.0, f64::max));
            emit(
                Echo::new("trace-formula")
                    .signature(&a.signature)
                    .flag("spectrum", path_arg(&a.spectrum))
                    .flag("t", join(&a.t))
                    .flag("length-cutoff", cutoff),
            );
            let sig = Signature::new(a.signature.genus, a.signature.cones.clone())?;
            let input = TraceFormulaInput {
                area: hyperbolic_area(&sig)?,
                cone_orders: sig.cone_orders().to_vec(),
                spectrum,
                length_cutoff: cutoff,
            };
            let rows = a
                .t
                .iter()
                .map(|&t| geometric_heat_trace(&input, t))
                .collect::<Result<Vec<_>>>()?;
            to_json(&rows)
        }
        Command::HuberExtract(a) => {
            let convention: Convention = a.convention.parse()?;
            let conv_name = match convention {
                Convention::TraceFormula => "trace-formula",
                Convention::Bare => "bare",
            };
            let (handle, grid, count, cutoff, source) = match (&a.csv, a.seed) {
                (Some(p), _) => {
                    let count = a
                        .count
                        .ok_or_else(|| Error::InvalidInput("--count is required with --csv".into()))?;
                    let h = HeatTraceHandle::from_csv(&read(p)?, convention, a.cutoff)?;
                    let grid = h.grid().expect("tabulated").to_vec();
                    (h, grid, count, a.cutoff, ("csv", path_arg(p)))
                }
                (None, Some(seed)) => {
                    let s = synthetic::length_spectrum(seed);
                    let count = a.count.unwrap_or(s.primitives.len());
                    let cutoff = a.cutoff.unwrap_or(synthetic::LENGTH_CUTOFF);
                    let mut spectrum = LengthSpectrum::with_powers(&s.primitives, cutoff);
                    spectrum.certified_cutoff = Some(cutoff);
                    let h = HeatTraceHandle::from_length_spectrum(&spectrum, convention, DEFAULT_PREC)?;
                    (h, default_length_grid(), count, Some(cutoff), ("seed", seed.to_string()))
                }
                (None, None) => unreachable!("clap requires a source"),
            };
            let mut echo = Echo::new("huber-extract");
            echo.flag(source.0, source.1)
                .flag("count", count)
                .flag("convention", conv_name)
                .flag("tol", a.tol);
            if let Some(c) = cutoff {
                echo.flag("cutoff", c);
            }
            emit(&echo);
            to_json(&extract_lengths(&handle, count, &grid, a.tol)?)
        }
        Command::HuberSpectrum(a) => {
            let mut echo = Echo::new("huber-spectrum");
            match (&a.spectrum, a.seed) {
                (Some(p), _) => echo.flag("spectrum", path_arg(p)),
                (None, Some(seed)) => echo.flag("seed", seed),
                (None, None) => unreachable!("clap requires a source"),
            };
            if !a.cones.is_empty() {
                echo.flag("cones", join(&a.cones));
            }
            echo.flag("lambda-max", a.lambda_max)
                .flag("tol", a.tol)
                .flag("t-min", a.t_min)
                .flag("t-max", a.t_max)
                .flag("points", a.points);
            emit(&echo);
            if !(a.t_min > 0.0 && a.t_max > a.t_min && a.points >= 2) {
                return Err(Error::InvalidGrid("need 0 < t-min < t-max and at least 2 points".into()));
            }
            let grid = log_grid(a.t_min, a.t_max, a.points);
            let c = match &a.spectrum {
                Some(p) => CFunctionHandle::from_geometry(&LengthSpectrum::from_csv(&read(p)?)?, &a.cones),
                None => {
                    let s = synthetic::spectral_data(a.seed.expect("seed"));
                    CFunctionHandle::from_spectral_data(&s.data, s.area, DEFAULT_PREC)?
                }
            };
            to_json(&recover_spectrum_from(&c, &grid, a.lambda_max, a.tol)?)
        }
        Command::Dirichlet(a) => {
            let center = a.center.unwrap_or(DEFAULT_CENTER);
            let mut echo = Echo::new("dirichlet");
            echo.flag("group", path_arg(&a.group))
                .flag("center", format!("{},{}", center.x, center.y));
            if let Some(p) = &a.svg {
                echo.flag("svg", path_arg(p)).flag("svg-size", a.svg_size);
            }
            emit(&echo);
            let g = read_group(&a.group)?;
            let p = auto_polygon(&g, center)?;
            if let Some(path) = &a.svg {
                side_files.push((path.clone(), to_svg(&p, a.svg_size, a.svg_size)));
            }
            let mut v = serde_json::to_value(&p).expect("serializable");
            v["area"] = serde_json::to_value(F17(polygon_area(&p))).expect("serializable");
            to_json(&v)
        }
        Command::Fricke(a) => {
            let (g, h) = match (&a.g, &a.h, a.seed) {
                (Some(g), Some(h), _) => {
                    emit(Echo::new("fricke").flag("g", path_arg(g)).flag("h", path_arg(h)));
                    (read_group(g)?, read_group(h)?)
                }
                (_, _, Some(seed)) => {
                    emit(Echo::new("fricke").flag("seed", seed));
                    let inst = synthetic::fricke_instance(seed);
                    (inst.g, inst.h)
                }
                _ => unreachable!("clap requires a source"),
            };
            // already-normalized input keeps its frame so the witness is meaningful
            let prep = |g: GroupPresentation| if is_normalized(&g) { Ok(g) } else { normalize(&g) };
            to_json(&reconstruct_equivalence(&prep(g)?, &prep(h)?)?)
        }
    };
    Ok((out, side_files))
}

fn error_json(code: &str, message: &str) -> String {
    json!({ "code": code, "message": message }).to_string()
}

/// Parses `argv` (program name first) and runs it, writing to the given
/// streams. Returns the exit code.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            let msg = e.render().to_string();
            let _ = writeln!(err, "{}", error_json("Usage", msg.trim()));
            return 2;
        }
    };
    let mut emit = |echo: &Echo| {
        let mut argv = echo.0.clone();
        if let Some(p) = &cli.out {
            argv.push("--out".into());
            argv.push(path_arg(p));
        }
        let _ = writeln!(err, "{}", json!({ "config": { "subcommand": echo.0[0], "argv": argv } }));
    };
    let result = execute(&cli.command, &mut emit).and_then(|(text, side_files)| {
        for (path, content) in side_files {
            std::fs::write(path, content)?;
        }
        match &cli.out {
            Some(p) => std::fs::write(p, text)?,
            None => out.write_all(text.as_bytes())?,
        }
        Ok(())
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{}", error_json(e.code(), &e.to_string()));
            1
        }
    }
}

/// [`run_with`] on the process streams.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signature_flags_parse() {
        let s = parse_signature("genus=1,cones=2,2").unwrap();
        assert_eq!((s.genus, s.cone_orders()), (1, &[2, 2][..]));
        assert_eq!(parse_signature("genus=2").unwrap().cone_orders(), &[] as &[u32]);
        assert!(parse_signature("cones=2").is_err());
        assert!(parse_signature("genus=0,3").is_err());
        assert!(parse_signature("genus=0,cones=1").is_err());
        assert_eq!(signature_arg(&s), "genus=1,cones=2,2");
    }
}
