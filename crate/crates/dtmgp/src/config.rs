//! Run configuration, model serialization, and the small text formats the
//! command-line tool speaks.
//!
//! Configuration is a `key = value` document, one pair per line, `#`
//! comments allowed. Unknown and duplicate keys are rejected with their
//! line number. Layers are declared as `layer.N.width`, `layer.N.level`,
//! `layer.N.kernel` (N starting at 1); each layer's kernel is the named
//! one-dimensional Markov kernel applied per input dimension. An optional
//! `layer.N.in_width` asserts the expected input width and fails fast on
//! chain mismatches.
//!
//! Model files are versioned text with the config echoed verbatim, the
//! normalization maps, every parameter matrix at 17 significant digits
//! (which round-trips `f64` bitwise), and optionally the optimizer state
//! so training can resume exactly.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::sparse_grid_size;
use crate::kernel::{MarkovKernel1D, TensorMarkovKernel};
use crate::model::{Affine, DtmgpModel, LayerSpec, Normalization};
use crate::train::{PriorSpec, TrainConfig, TrainState};

const MODEL_MAGIC: &str = "dtmgp-model v1";

/// Grid size used by the kernel validity check at parse time.
const KERNEL_VALIDATION_GRID: usize = 1024;

#[derive(Debug, Clone)]
pub struct LayerConfig {
    pub width: usize,
    pub level: u32,
    pub kernel: MarkovKernel1D,
    pub declared_in_width: Option<usize>,
}

/// Fully validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub input_dim: usize,
    pub layers: Vec<LayerConfig>,
    pub prior: PriorSpec,
    pub train: TrainConfig,
    pub noise_var_init: f64,
    pub normalize: bool,
    pub interlayer_logistic: bool,
}

impl RunConfig {
    /// Input width of each layer under the chaining rule.
    pub fn in_widths(&self) -> Vec<usize> {
        let mut widths = Vec::with_capacity(self.layers.len());
        let mut current = self.input_dim;
        for layer in &self.layers {
            widths.push(current);
            current = layer.width;
        }
        widths
    }

    /// Feature count of each layer (the sparse-grid size of its level at
    /// its input width).
    pub fn feature_counts(&self) -> Vec<usize> {
        self.in_widths()
            .iter()
            .zip(&self.layers)
            .map(|(&d, l)| sparse_grid_size(l.level, d))
            .collect()
    }

    /// Builds the model this configuration describes, with the noise
    /// variance initialized from the config and prior-mean biases.
    pub fn build_model(&self) -> Result<DtmgpModel> {
        let specs: Vec<LayerSpec> = self
            .in_widths()
            .iter()
            .zip(&self.layers)
            .map(|(&in_width, layer)| {
                Ok(LayerSpec {
                    in_width,
                    out_width: layer.width,
                    level: layer.level,
                    kernel: TensorMarkovKernel::isotropic(layer.kernel.clone(), in_width)?,
                })
            })
            .collect::<Result<_>>()?;
        let mut model = DtmgpModel::new(specs, self.interlayer_logistic)?;
        model.log_noise_var = self.noise_var_init.ln();
        Ok(model)
    }

    /// Canonical `key = value` form; parsing it reproduces this config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "input_dim = {}", self.input_dim);
        let _ = writeln!(out, "layers = {}", self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let n = i + 1;
            let _ = writeln!(out, "layer.{n}.width = {}", layer.width);
            let _ = writeln!(out, "layer.{n}.level = {}", layer.level);
            let _ = writeln!(out, "layer.{n}.kernel = {}", layer.kernel.spec_string());
        }
        let _ = writeln!(out, "prior.weight_mean = {}", self.prior.weight_mean);
        let _ = writeln!(out, "prior.weight_std = {}", self.prior.weight_std);
        let _ = writeln!(out, "prior.bias_mean = {}", self.prior.bias_mean);
        let _ = writeln!(out, "train.steps = {}", self.train.steps);
        let _ = writeln!(out, "train.batch = {}", self.train.batch_size);
        let _ = writeln!(out, "train.mc_samples = {}", self.train.mc_samples);
        let _ = writeln!(out, "train.learning_rate = {}", self.train.learning_rate);
        let _ = writeln!(out, "train.noise_var_init = {}", self.noise_var_init);
        let _ = writeln!(out, "normalize = {}", self.normalize);
        let _ = writeln!(
            out,
            "interlayer = {}",
            if self.interlayer_logistic { "logistic" } else { "none" }
        );
        out
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut pairs: HashMap<String, (String, usize)> = HashMap::new();
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let n = line_no + 1;
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {n}: expected `key = value`, got `{line}`")))?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if pairs.insert(key.clone(), (value, n)).is_some() {
            return Err(Error::Config(format!("line {n}: duplicate key `{key}`")));
        }
    }
    let mut used: HashMap<String, bool> = pairs.keys().map(|k| (k.clone(), false)).collect();
    let mut take = |key: &str| -> Option<(String, usize)> {
        if let Some(v) = pairs.get(key) {
            used.insert(key.to_string(), true);
            Some(v.clone())
        } else {
            None
        }
    };
    fn parse_as<T: std::str::FromStr>(key: &str, raw: &(String, usize)) -> Result<T> {
        raw.0.parse().map_err(|_| {
            Error::Config(format!("line {}: invalid value `{}` for `{key}`", raw.1, raw.0))
        })
    }
    fn required<T: std::str::FromStr>(key: &str, v: Option<(String, usize)>) -> Result<T> {
        let raw = v.ok_or_else(|| Error::Config(format!("missing required key `{key}`")))?;
        parse_as(key, &raw)
    }
    fn optional<T: std::str::FromStr>(key: &str, v: Option<(String, usize)>, default: T) -> Result<T> {
        match v {
            Some(raw) => parse_as(key, &raw),
            None => Ok(default),
        }
    }

    let seed: u64 = required("seed", take("seed"))?;
    let input_dim: usize = required("input_dim", take("input_dim"))?;
    let n_layers: usize = required("layers", take("layers"))?;
    if input_dim == 0 || n_layers == 0 {
        return Err(Error::Config("input_dim and layers must be positive".into()));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for i in 1..=n_layers {
        let width: usize = required(&format!("layer.{i}.width"), take(&format!("layer.{i}.width")))?;
        let level: u32 = required(&format!("layer.{i}.level"), take(&format!("layer.{i}.level")))?;
        let kernel_raw = take(&format!("layer.{i}.kernel"))
            .ok_or_else(|| Error::Config(format!("missing required key `layer.{i}.kernel`")))?;
        let kernel = MarkovKernel1D::parse(&kernel_raw.0)
            .map_err(|e| Error::Config(format!("line {}: {e}", kernel_raw.1)))?;
        let declared_in_width: Option<usize> =
            match take(&format!("layer.{i}.in_width")) {
                Some(raw) => Some(parse_as(&format!("layer.{i}.in_width"), &raw)?),
                None => None,
            };
        if width == 0 || level == 0 {
            return Err(Error::Config(format!("layer {i}: width and level must be positive")));
        }
        if !kernel.validate(KERNEL_VALIDATION_GRID).passed() {
            return Err(Error::Config(format!(
                "layer {i}: kernel `{}` fails the Markov validity check",
                kernel.spec_string()
            )));
        }
        layers.push(LayerConfig {
            width,
            level,
            kernel,
            declared_in_width,
        });
    }
    let prior = PriorSpec {
        weight_mean: optional("prior.weight_mean", take("prior.weight_mean"), 0.0)?,
        weight_std: optional("prior.weight_std", take("prior.weight_std"), 1.0)?,
        bias_mean: optional("prior.bias_mean", take("prior.bias_mean"), 0.0)?,
    };
    if !(prior.weight_std > 0.0) {
        return Err(Error::Config("prior.weight_std must be positive".into()));
    }
    let train = TrainConfig {
        steps: optional("train.steps", take("train.steps"), 500)?,
        batch_size: optional("train.batch", take("train.batch"), 64)?,
        mc_samples: optional("train.mc_samples", take("train.mc_samples"), 8)?,
        learning_rate: optional("train.learning_rate", take("train.learning_rate"), 1e-2)?,
        seed,
    };
    let noise_var_init: f64 =
        optional("train.noise_var_init", take("train.noise_var_init"), 0.01)?;
    if !(noise_var_init > 0.0) {
        return Err(Error::Config("train.noise_var_init must be positive".into()));
    }
    let normalize: bool = optional("normalize", take("normalize"), true)?;
    let interlayer_logistic = match take("interlayer") {
        None => false,
        Some(raw) => match raw.0.as_str() {
            "none" => false,
            "logistic" => true,
            other => {
                return Err(Error::Config(format!(
                    "line {}: interlayer must be `none` or `logistic`, got `{other}`",
                    raw.1
                )))
            }
        },
    };
    for (key, was_used) in used {
        if !was_used {
            let line = pairs[&key].1;
            return Err(Error::Config(format!("line {line}: unknown key `{key}`")));
        }
    }
    // width chain validation against any declared input widths
    let config = RunConfig {
        seed,
        input_dim,
        layers,
        prior,
        train,
        noise_var_init,
        normalize,
        interlayer_logistic,
    };
    for (i, (expected, layer)) in config.in_widths().iter().zip(&config.layers).enumerate() {
        if let Some(declared) = layer.declared_in_width {
            if declared != *expected {
                return Err(Error::Config(format!(
                    "width mismatch layer {}: declared in_width {declared} but the chain provides {expected}",
                    i + 1
                )));
            }
        }
    }
    Ok(config)
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes the model (and optionally the optimizer state) as a versioned
/// text file. `load_model` of the result reproduces every parameter
/// bitwise.
pub fn save_model(
    path: &Path,
    model: &DtmgpModel,
    config: &RunConfig,
    state: Option<&TrainState>,
) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "{MODEL_MAGIC}");
    let _ = writeln!(out, "[config]");
    out.push_str(&config.to_text());
    let _ = writeln!(out, "[normalization]");
    for (j, map) in model.normalization.inputs.iter().enumerate() {
        let _ = writeln!(out, "input {j} {} {}", fmt17(map.scale), fmt17(map.shift));
    }
    let _ = writeln!(
        out,
        "output {} {}",
        fmt17(model.normalization.output.scale),
        fmt17(model.normalization.output.shift)
    );
    let _ = writeln!(out, "[params]");
    let _ = writeln!(out, "noise_log_var {}", fmt17(model.log_noise_var));
    for (h, layer) in model.layers().iter().enumerate() {
        let (w, m) = (layer.out_width(), layer.feature_count());
        for (name, mat) in [("log_sigma", &layer.params.log_sigma), ("mean_w", &layer.params.mean_w)] {
            let _ = writeln!(out, "layer {h} {name} {w} {m}");
            for i in 0..w {
                let row: Vec<String> = (0..m).map(|j| fmt17(mat.at(i, j))).collect();
                let _ = writeln!(out, "{}", row.join(" "));
            }
        }
        let _ = writeln!(out, "layer {h} bias {w}");
        let row: Vec<String> = layer.params.bias.iter().map(|&v| fmt17(v)).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    if let Some(state) = state {
        let _ = writeln!(out, "[state]");
        let _ = writeln!(out, "step {}", state.step);
        for (name, values) in [("adam_m", &state.adam_m), ("adam_v", &state.adam_v)] {
            let _ = writeln!(out, "{name} {}", values.len());
            let row: Vec<String> = values.iter().map(|&v| fmt17(v)).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
    }
    let _ = writeln!(out, "[end]");
    fs::write(path, out)?;
    Ok(())
}

struct LineReader<'a> {
    lines: std::str::Lines<'a>,
    /// Byte offset of the line most recently returned.
    offset: u64,
    next_offset: u64,
}

impl<'a> LineReader<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines(),
            offset: 0,
            next_offset: 0,
        }
    }

    fn next(&mut self) -> Option<&'a str> {
        let line = self.lines.next()?;
        self.offset = self.next_offset;
        self.next_offset += line.len() as u64 + 1;
        Some(line)
    }

    fn expect(&mut self, what: &str) -> Result<&'a str> {
        self.next().ok_or_else(|| Error::Format {
            offset: self.next_offset,
            message: format!("unexpected end of file, expected {what}"),
        })
    }

    fn fail<T>(&self, message: String) -> Result<T> {
        Err(Error::Format {
            offset: self.offset,
            message,
        })
    }
}

fn parse_f64_strict(reader: &LineReader<'_>, token: &str) -> Result<f64> {
    token.parse().map_err(|_| Error::Format {
        offset: reader.offset,
        message: format!("invalid number `{token}`"),
    })
}

fn parse_float_row(reader: &LineReader<'_>, line: &str, expect: usize) -> Result<Vec<f64>> {
    let values: Vec<f64> = line
        .split_whitespace()
        .map(|t| parse_f64_strict(reader, t))
        .collect::<Result<_>>()?;
    if values.len() != expect {
        return Err(Error::Format {
            offset: reader.offset,
            message: format!("expected {expect} numbers, found {}", values.len()),
        });
    }
    Ok(values)
}

/// Loads a model file: the rebuilt model, the echoed configuration, and
/// the optimizer state when the file carries one.
pub fn load_model(path: &Path) -> Result<(DtmgpModel, RunConfig, Option<TrainState>)> {
    let text = fs::read_to_string(path)?;
    let mut reader = LineReader::new(&text);
    let magic = reader.expect("version header")?;
    if magic.trim() != MODEL_MAGIC {
        return reader.fail(format!("unsupported version `{}`", magic.trim()));
    }
    let section = reader.expect("[config]")?;
    if section.trim() != "[config]" {
        return reader.fail(format!("expected [config], got `{section}`"));
    }
    let mut config_text = String::new();
    let norm_header = loop {
        let line = reader.expect("[normalization]")?;
        if line.trim() == "[normalization]" {
            break line;
        }
        config_text.push_str(line);
        config_text.push('\n');
    };
    let _ = norm_header;
    let config = parse_config(&config_text)?;
    let mut model = config.build_model()?;
    // normalization maps
    let mut inputs = Vec::with_capacity(config.input_dim);
    for j in 0..config.input_dim {
        let line = reader.expect("input normalization")?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 4 || tokens[0] != "input" || tokens[1] != j.to_string() {
            return reader.fail(format!("expected `input {j} <scale> <shift>`, got `{line}`"));
        }
        inputs.push(Affine {
            scale: parse_f64_strict(&reader, tokens[2])?,
            shift: parse_f64_strict(&reader, tokens[3])?,
        });
    }
    let line = reader.expect("output normalization")?;
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() != 3 || tokens[0] != "output" {
        return reader.fail(format!("expected `output <scale> <shift>`, got `{line}`"));
    }
    model.normalization = Normalization {
        inputs,
        output: Affine {
            scale: parse_f64_strict(&reader, tokens[1])?,
            shift: parse_f64_strict(&reader, tokens[2])?,
        },
    };
    let line = reader.expect("[params]")?;
    if line.trim() != "[params]" {
        return reader.fail(format!("expected [params], got `{line}`"));
    }
    let line = reader.expect("noise_log_var")?;
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() != 2 || tokens[0] != "noise_log_var" {
        return reader.fail(format!("expected `noise_log_var <v>`, got `{line}`"));
    }
    model.log_noise_var = parse_f64_strict(&reader, tokens[1])?;
    for h in 0..model.depth() {
        let (w, m) = {
            let layer = &model.layers()[h];
            (layer.out_width(), layer.feature_count())
        };
        for name in ["log_sigma", "mean_w"] {
            let line = reader.expect("matrix header")?;
            let want = format!("layer {h} {name} {w} {m}");
            if line.trim() != want {
                return reader.fail(format!("expected `{want}`, got `{line}`"));
            }
            for i in 0..w {
                let line = reader.expect("matrix row")?;
                let row = parse_float_row(&reader, line, m)?;
                let mat = match name {
                    "log_sigma" => &mut model.layers_mut()[h].params.log_sigma,
                    _ => &mut model.layers_mut()[h].params.mean_w,
                };
                for (j, v) in row.into_iter().enumerate() {
                    *mat.at_mut(i, j) = v;
                }
            }
        }
        let line = reader.expect("bias header")?;
        let want = format!("layer {h} bias {w}");
        if line.trim() != want {
            return reader.fail(format!("expected `{want}`, got `{line}`"));
        }
        let line = reader.expect("bias row")?;
        let row = parse_float_row(&reader, line, w)?;
        model.layers_mut()[h].params.bias = row;
    }
    // optional optimizer state, then the end marker
    let line = reader.expect("[state] or [end]")?;
    let state = match line.trim() {
        "[end]" => None,
        "[state]" => {
            let line = reader.expect("step")?;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.len() != 2 || tokens[0] != "step" {
                return reader.fail(format!("expected `step <n>`, got `{line}`"));
            }
            let step: usize = tokens[1].parse().map_err(|_| Error::Format {
                offset: reader.offset,
                message: format!("invalid step `{}`", tokens[1]),
            })?;
            let mut vectors = Vec::new();
            for name in ["adam_m", "adam_v"] {
                let line = reader.expect("state vector header")?;
                let tokens: Vec<&str> = line.split_whitespace().collect();
                if tokens.len() != 2 || tokens[0] != name {
                    return reader.fail(format!("expected `{name} <len>`, got `{line}`"));
                }
                let len: usize = tokens[1].parse().map_err(|_| Error::Format {
                    offset: reader.offset,
                    message: format!("invalid length `{}`", tokens[1]),
                })?;
                let line = reader.expect("state vector")?;
                vectors.push(parse_float_row(&reader, line, len)?);
            }
            let adam_v = vectors.pop().unwrap();
            let adam_m = vectors.pop().unwrap();
            let line = reader.expect("[end]")?;
            if line.trim() != "[end]" {
                return reader.fail(format!("expected [end], got `{line}`"));
            }
            Some(TrainState {
                step,
                adam_m,
                adam_v,
            })
        }
        other => return reader.fail(format!("expected [state] or [end], got `{other}`")),
    };
    Ok((model, config, state))
}

/// Reads a numeric sample file: whitespace- or newline-separated floats,
/// `#` comments allowed.
pub fn load_samples(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    let mut offset = 0u64;
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        for token in line.split_whitespace() {
            out.push(token.parse().map_err(|_| Error::Format {
                offset,
                message: format!("line {}: invalid number `{token}`", line_no + 1),
            })?);
        }
        offset += raw.len() as u64 + 1;
    }
    Ok(out)
}

/// Reads a regression data file: one observation per line, whitespace- or
/// comma-separated, `input_dim` coordinates followed by the target.
pub fn load_dataset(path: &Path, input_dim: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let text = fs::read_to_string(path)?;
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let mut offset = 0u64;
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            offset += raw.len() as u64 + 1;
            continue;
        }
        let fields: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse().map_err(|_| Error::Format {
                    offset,
                    message: format!("line {}: invalid number `{t}`", line_no + 1),
                })
            })
            .collect::<Result<_>>()?;
        if fields.len() != input_dim + 1 {
            return Err(Error::Format {
                offset,
                message: format!(
                    "line {}: expected {} fields, found {}",
                    line_no + 1,
                    input_dim + 1,
                    fields.len()
                ),
            });
        }
        targets.push(fields[input_dim]);
        inputs.push(fields[..input_dim].to_vec());
        offset += raw.len() as u64 + 1;
    }
    Ok((inputs, targets))
}
