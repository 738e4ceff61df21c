//! Semicolon-separated experiment artifacts. Every file starts with a `#`
//! comment line carrying the config hash, seed, run count and scenario.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::{AggregateReport, Detector, RecordRow, RunRecord};
use crate::dynamics::AgentId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvMeta {
    pub config_hash: String,
    pub seed: u64,
    pub runs: u64,
    pub scenario: String,
}

impl CsvMeta {
    fn write_comment(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(
            out,
            "# config_hash={} seed={} runs={} scenario={}",
            self.config_hash, self.seed, self.runs, self.scenario
        )
    }
}

fn writer<W: Write>(meta: &CsvMeta, mut out: W) -> Result<csv::Writer<W>> {
    meta.write_comment(&mut out).map_err(csv::Error::from)?;
    Ok(csv::WriterBuilder::new().delimiter(b';').from_writer(out))
}

/// `k;agent;p_sfd;p_dfd` for every round and agent.
pub fn emit_alarm_probabilities(report: &AggregateReport, meta: &CsvMeta, out: impl Write) -> Result<()> {
    let mut w = writer(meta, out)?;
    w.write_record(["k", "agent", "p_sfd", "p_dfd"])?;
    if report.runs > 0 {
        for k in 0..report.run_length {
            for i in 0..report.n_agents {
                let a = AgentId::from_index(i);
                w.write_record([
                    k.to_string(),
                    a.to_string(),
                    report.alarm_probability(Detector::Static, a, k).to_string(),
                    report.alarm_probability(Detector::Dynamic, a, k).to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `k;mean;std;lower;upper` of the band state component.
pub fn emit_state_bands(report: &AggregateReport, meta: &CsvMeta, out: impl Write) -> Result<()> {
    let mut w = writer(meta, out)?;
    w.write_record(["k", "mean", "std", "lower", "upper"])?;
    if report.runs > 0 {
        for k in 0..report.run_length {
            let (m, s) = report.band(k);
            w.write_record([k.to_string(), m.to_string(), s.to_string(), (m - s).to_string(), (m + s).to_string()])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Interval false-positive and detection rates, then the detection-delay
/// distribution of the faulty agents.
///
/// Rates are means of the per-timestep alarm probability over the listed
/// rounds and agents. Rounds before 50 are excluded as warm-up.
pub fn emit_summary(report: &AggregateReport, meta: &CsvMeta, out: impl Write) -> Result<()> {
    let mut w = writer(meta, out)?;
    w.write_record(["metric", "detector", "group", "k_start", "k_end", "value"])?;
    if report.runs == 0 || report.run_length == 0 {
        w.flush().map_err(csv::Error::from)?;
        return Ok(());
    }
    let last = report.run_length - 1;
    let warm = 50.min(last);
    let intervals: Vec<(usize, usize)> = match report.event_round {
        Some(e) if (e as usize) > warm && (e as usize) <= last => vec![(warm, e as usize - 1), (e as usize, last)],
        _ => vec![(warm, last)],
    };
    let all: Vec<AgentId> = (0..report.n_agents).map(AgentId::from_index).collect();
    let mut groups = vec![("all", all)];
    if !report.faulty.is_empty() {
        groups.push(("faulty", report.faulty.clone()));
        groups.push(("healthy", report.healthy()));
    }
    for det in Detector::ALL {
        for (name, agents) in &groups {
            for &(a, b) in &intervals {
                let rate = report.interval_rate(det, agents, a..=b);
                w.write_record(["alarm_rate", det.name(), name, &a.to_string(), &b.to_string(), &rate.to_string()])?;
            }
        }
    }
    for det in Detector::ALL {
        for (delay, count) in &report.delays[det as usize] {
            w.write_record(["delay", det.name(), "faulty", &delay.to_string(), &delay.to_string(), &count.to_string()])?;
        }
        if report.event_round.is_some() && !report.faulty.is_empty() {
            w.write_record(["undetected", det.name(), "faulty", "", "", &report.undetected[det as usize].to_string()])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `run;seed;k;agent;gamma;priority;sfd;dfd;x<c>...` for every recorded run.
pub fn emit_records(records: &[RunRecord], meta: &CsvMeta, out: impl Write) -> Result<()> {
    let mut w = writer(meta, out)?;
    let components = records.first().map(|r| r.components.clone()).unwrap_or_default();
    if records.iter().any(|r| r.components != components) {
        return Err(Error::config("run records disagree on recorded state components"));
    }
    let mut header: Vec<String> = ["run", "seed", "k", "agent", "gamma", "priority", "sfd", "dfd"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(components.iter().map(|c| format!("x{c}")));
    w.write_record(&header)?;
    let mut fields = Vec::with_capacity(header.len());
    for rec in records {
        for row in &rec.rows {
            fields.clear();
            fields.push(rec.run.to_string());
            fields.push(rec.seed.to_string());
            fields.push(row.k.to_string());
            fields.push(row.agent.to_string());
            fields.push((row.gamma as u8).to_string());
            fields.push(row.priority.to_string());
            fields.push((row.sfd as u8).to_string());
            fields.push((row.dfd as u8).to_string());
            fields.extend(row.states.iter().map(f64::to_string));
            w.write_record(&fields)?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, what: &str) -> Result<T> {
    let raw = rec.get(i).ok_or_else(|| Error::config(format!("missing column {what}")))?;
    raw.parse()
        .map_err(|_| Error::config(format!("bad {what} value {raw:?} on line {}", rec.position().map_or(0, |p| p.line()))))
}

fn parse_flag(rec: &csv::StringRecord, i: usize, what: &str) -> Result<bool> {
    match parse_field::<u8>(rec, i, what)? {
        0 => Ok(false),
        1 => Ok(true),
        v => Err(Error::config(format!("bad {what} flag {v}"))),
    }
}

/// Inverse of [`emit_records`].
pub fn parse_records(input: impl Read) -> Result<Vec<RunRecord>> {
    let mut r = csv::ReaderBuilder::new().delimiter(b';').comment(Some(b'#')).from_reader(input);
    let header = r.headers()?.clone();
    if header.len() < 8 {
        return Err(Error::config("run record header has too few columns"));
    }
    let components = header
        .iter()
        .skip(8)
        .map(|h| {
            h.strip_prefix('x')
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| Error::config(format!("bad state column {h:?}")))
        })
        .collect::<Result<Vec<usize>>>()?;
    let mut out: Vec<RunRecord> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let run: u64 = parse_field(&rec, 0, "run")?;
        let seed: u64 = parse_field(&rec, 1, "seed")?;
        let row = RecordRow {
            k: parse_field(&rec, 2, "k")?,
            agent: AgentId(parse_field(&rec, 3, "agent")?),
            gamma: parse_flag(&rec, 4, "gamma")?,
            priority: parse_field(&rec, 5, "priority")?,
            sfd: parse_flag(&rec, 6, "sfd")?,
            dfd: parse_flag(&rec, 7, "dfd")?,
            states: (0..components.len())
                .map(|j| parse_field(&rec, 8 + j, "state"))
                .collect::<Result<_>>()?,
        };
        match out.last_mut() {
            Some(last) if last.run == run && last.seed == seed => last.rows.push(row),
            _ => out.push(RunRecord {
                run,
                seed,
                components: components.clone(),
                rows: vec![row],
            }),
        }
    }
    Ok(out)
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes `alarm_probability.csv`, `state_bands.csv`, `summary.csv` and,
/// when records exist, `records.csv` into `dir`.
pub fn write_outputs(dir: &Path, report: &AggregateReport, records: &[RunRecord], meta: &CsvMeta) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let with_path = |path: &Path, e: Error| match e {
        Error::Csv(c) => Error::Parse {
            path: path.to_path_buf(),
            message: c.to_string(),
        },
        other => other,
    };
    let p = dir.join("alarm_probability.csv");
    emit_alarm_probabilities(report, meta, create(&p)?).map_err(|e| with_path(&p, e))?;
    written.push(p);
    let p = dir.join("state_bands.csv");
    emit_state_bands(report, meta, create(&p)?).map_err(|e| with_path(&p, e))?;
    written.push(p);
    let p = dir.join("summary.csv");
    emit_summary(report, meta, create(&p)?).map_err(|e| with_path(&p, e))?;
    written.push(p);
    if !records.is_empty() {
        let p = dir.join("records.csv");
        emit_records(records, meta, create(&p)?).map_err(|e| with_path(&p, e))?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::Scenario;

    fn meta() -> CsvMeta {
        CsvMeta {
            config_hash: "abc".into(),
            seed: 7,
            runs: 2,
            scenario: "fault-free".into(),
        }
    }

    fn emit(f: impl Fn(&mut Vec<u8>)) -> String {
        let mut buf = Vec::new();
        f(&mut buf);
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn empty_report_is_header_only() {
        let rep = AggregateReport::empty(3, 0, &Scenario::fault_free());
        let text = emit(|b| emit_alarm_probabilities(&rep, &meta(), b).unwrap());
        assert_eq!(text, "# config_hash=abc seed=7 runs=2 scenario=fault-free\nk;agent;p_sfd;p_dfd\n");
    }

    #[test]
    fn two_run_toy_aggregate_bytes() {
        // Two runs, one agent, two rounds. Run 0 alarms sFD at k=1; run 1
        // alarms both detectors at k=1. Band values: run 0 (1, 3), run 1 (3, 3).
        let mut rep = AggregateReport::empty(1, 2, &Scenario::fault_free());
        rep.runs = 2;
        rep.alarms = [vec![0, 2], vec![0, 1]];
        rep.band_sum = vec![4.0, 6.0];
        rep.band_sum_sq = vec![10.0, 18.0];
        let text = emit(|b| emit_alarm_probabilities(&rep, &meta(), b).unwrap());
        assert_eq!(
            text,
            "# config_hash=abc seed=7 runs=2 scenario=fault-free\nk;agent;p_sfd;p_dfd\n0;1;0;0\n1;1;1;0.5\n"
        );
        let text = emit(|b| emit_state_bands(&rep, &meta(), b).unwrap());
        assert_eq!(
            text,
            "# config_hash=abc seed=7 runs=2 scenario=fault-free\nk;mean;std;lower;upper\n0;2;1;1;3\n1;3;0;3;3\n"
        );
    }

    #[test]
    fn records_round_trip() {
        let rec = |run| RunRecord {
            run,
            seed: 11,
            components: vec![0, 3],
            rows: vec![
                RecordRow {
                    k: 0,
                    agent: AgentId(1),
                    gamma: false,
                    priority: 0,
                    sfd: false,
                    dfd: false,
                    states: vec![0.1 + 0.2, -1e-300],
                },
                RecordRow {
                    k: 0,
                    agent: AgentId(2),
                    gamma: true,
                    priority: 255,
                    sfd: true,
                    dfd: false,
                    states: vec![f64::MAX, 5e-324],
                },
            ],
        };
        let records = vec![rec(0), rec(1)];
        let text = emit(|b| emit_records(&records, &meta(), b).unwrap());
        assert_eq!(parse_records(text.as_bytes()).unwrap(), records);
        assert!(parse_records("run;seed;k;agent;gamma;priority;sfd;dfd\n0;1;0;1;2;0;0;0\n".as_bytes()).is_err());
    }
}
