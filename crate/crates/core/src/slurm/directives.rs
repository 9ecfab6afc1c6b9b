//! Reading `#SBATCH` header lines back out of a batch script.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DirectiveError {
    #[error("directive {flag} needs a value")]
    MissingValue { flag: String },
    #[error("bad value {value:?} for {flag}")]
    BadValue { flag: String, value: String },
}

/// Long form of a known short option, or the option itself.
pub fn canonical_flag(flag: &str) -> &str {
    match flag {
        "-n" => "--ntasks",
        "-c" => "--cpus-per-task",
        "-t" => "--time",
        "-J" => "--job-name",
        "-o" => "--output",
        "-e" => "--error",
        other => other,
    }
}

fn takes_value(canonical: &str) -> bool {
    matches!(
        canonical,
        "--ntasks" | "--cpus-per-task" | "--time" | "--job-name" | "--output" | "--error" | "--mem"
    )
}

/// Splits one directive body (`--ntasks=4`, `--ntasks 4`, `-n4`, `-n 4`,
/// `--exclusive`) into its canonical flag and optional value.
pub fn split_directive(body: &str) -> (String, Option<String>) {
    let body = body.trim();
    if let Some(long) = body.strip_prefix("--") {
        let (name, value) = match long.find(['=', ' ', '\t']) {
            Some(i) => (&long[..i], Some(long[i + 1..].trim().to_string())),
            None => (long, None),
        };
        return (format!("--{name}"), value);
    }
    if body.starts_with('-') && body.len() >= 2 {
        let split = body.char_indices().nth(2).map(|(i, _)| i).unwrap_or(body.len());
        let (flag, rest) = body.split_at(split);
        let rest = rest.trim();
        let value = (!rest.is_empty()).then(|| rest.to_string());
        return (canonical_flag(flag).to_string(), value);
    }
    (body.to_string(), None)
}

/// Directive bodies in order of appearance. Like sbatch, scanning stops at
/// the first line that is neither blank nor a comment.
pub fn script_directives(script: &str) -> Vec<(String, Option<String>)> {
    let mut out = Vec::new();
    for line in script.lines() {
        let trimmed = line.trim();
        if let Some(body) = trimmed.strip_prefix("#SBATCH") {
            if body.starts_with([' ', '\t']) {
                out.push(split_directive(body));
            }
            continue;
        }
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        break;
    }
    out
}

/// Slurm memory size (`2048`, `2048M`, `4G`, `512K`, `1T`) in MiB,
/// rounding kilobytes up.
pub fn parse_mem_mib(value: &str) -> Option<u64> {
    let value = value.trim();
    let (digits, unit) = match value.char_indices().last()? {
        (i, c) if c.is_ascii_alphabetic() => (&value[..i], c.to_ascii_uppercase()),
        _ => (value, 'M'),
    };
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let n: u64 = digits.parse().ok()?;
    match unit {
        'K' => Some(n.div_ceil(1024)),
        'M' => Some(n),
        'G' => n.checked_mul(1024),
        'T' => n.checked_mul(1024 * 1024),
        _ => None,
    }
}

/// Slurm time limit in whole minutes, seconds rounded up. Accepts `M`,
/// `M:S`, `H:M:S`, `D-H`, `D-H:M` and `D-H:M:S`. `UNLIMITED` and
/// `INFINITE` yield `Ok(None)`.
pub fn parse_time_minutes(value: &str) -> Result<Option<u64>, ()> {
    let value = value.trim();
    if value.eq_ignore_ascii_case("unlimited") || value.eq_ignore_ascii_case("infinite") {
        return Ok(None);
    }
    let num = |s: &str| -> Result<u64, ()> {
        if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(());
        }
        s.parse().map_err(|_| ())
    };
    let (days, rest) = match value.split_once('-') {
        Some((d, rest)) => (Some(num(d)?), rest),
        None => (None, value),
    };
    let parts = rest.split(':').map(num).collect::<Result<Vec<_>, _>>()?;
    let (d, h, m, s) = match (days, parts.as_slice()) {
        (None, [m]) => (0, 0, *m, 0),
        (None, [m, s]) => (0, 0, *m, *s),
        (None, [h, m, s]) => (0, *h, *m, *s),
        (Some(d), [h]) => (d, *h, 0, 0),
        (Some(d), [h, m]) => (d, *h, *m, 0),
        (Some(d), [h, m, s]) => (d, *h, *m, *s),
        _ => return Err(()),
    };
    let seconds = [(d, 86400), (h, 3600), (m, 60), (s, 1)]
        .into_iter()
        .try_fold(0u64, |acc, (n, unit)| n.checked_mul(unit).and_then(|v| acc.checked_add(v)))
        .ok_or(())?;
    Ok(Some(seconds.div_ceil(60)))
}

/// Resource demand implied by a script header, last occurrence winning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeaderDemand {
    pub cpus: u64,
    pub mem_mib: u64,
    pub time_minutes: Option<u64>,
}

pub fn header_demand(script: &str) -> Result<HeaderDemand, DirectiveError> {
    let mut ntasks = 1;
    let mut cpus_per_task = 1;
    let mut mem_mib = 0;
    let mut time_minutes = None;
    for (flag, value) in script_directives(script) {
        if !takes_value(&flag) {
            continue;
        }
        let value = value.ok_or_else(|| DirectiveError::MissingValue { flag: flag.clone() })?;
        let bad = || DirectiveError::BadValue {
            flag: flag.clone(),
            value: value.clone(),
        };
        match flag.as_str() {
            "--ntasks" => ntasks = value.parse::<u64>().map_err(|_| bad())?,
            "--cpus-per-task" => cpus_per_task = value.parse::<u64>().map_err(|_| bad())?,
            "--mem" => mem_mib = parse_mem_mib(&value).ok_or_else(bad)?,
            "--time" => time_minutes = parse_time_minutes(&value).map_err(|_| bad())?,
            _ => {}
        }
    }
    let cpus = ntasks.checked_mul(cpus_per_task).ok_or_else(|| DirectiveError::BadValue {
        flag: "--ntasks".into(),
        value: ntasks.to_string(),
    })?;
    Ok(HeaderDemand {
        cpus,
        mem_mib,
        time_minutes,
    })
}
