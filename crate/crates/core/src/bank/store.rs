//! On-disk layout, one directory per bank:
//!
//! - `observations.jsonl`: `{hash, observation}`, each screen stored once
//! - `blocks.jsonl`: bottom layer, one record per step, screens by hash
//! - `middle.jsonl`: simplified trajectories
//! - `top.jsonl`: conclusions
//! - `manifests/<id>.json`: written last; a trajectory without a manifest is
//!   ignored on load, so an interrupted write never shows up half-stored.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{render_block, simplify, BankError, FullTrajectory, Layer, SimplifiedTrajectory, TrajKind, TrajStep};
use crate::agents::{AnalyzerOutput, Conclusion, InfoSource};
use crate::env::{HardAction, Observation, TaskInstance};

const OBSERVATIONS: &str = "observations.jsonl";
const BLOCKS: &str = "blocks.jsonl";
const MIDDLE: &str = "middle.jsonl";
const TOP: &str = "top.jsonl";
const MANIFESTS: &str = "manifests";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub id: String,
    pub seq: usize,
    pub task: TaskInstance,
    pub kind: TrajKind,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub splice: Option<usize>,
    pub reward: u8,
    pub o_final: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct ObsRecord {
    hash: String,
    observation: Observation,
}

#[derive(Serialize, Deserialize)]
struct BlockRecord {
    traj_id: String,
    step: usize,
    obs_before: String,
    action: String,
    hard: HardAction,
    rho: String,
    obs_after: String,
}

#[derive(Serialize, Deserialize)]
struct MiddleRecord {
    traj_id: String,
    simplified: SimplifiedTrajectory,
}

#[derive(Serialize, Deserialize)]
struct TopRecord {
    traj_id: String,
    kind: TrajKind,
    reward: u8,
    conclusion: Conclusion,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    analyzer: Option<AnalyzerOutput>,
}

pub struct Bank {
    dir: PathBuf,
    observations: BTreeMap<String, Observation>,
    manifests: BTreeMap<String, Manifest>,
    trajectories: BTreeMap<String, FullTrajectory>,
    middle: BTreeMap<String, SimplifiedTrajectory>,
    order: Vec<String>,
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, BankError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(v) => out.push(v),
            // a torn final line from an interrupted append belongs to no manifest
            Err(e) => log::warn!("{file}:{}: skipping unreadable record: {e}", i + 1),
        }
    }
    Ok(out)
}

fn append_lines(path: &Path, lines: &[String]) -> Result<(), BankError> {
    if lines.is_empty() {
        return Ok(());
    }
    let mut buf = String::new();
    for l in lines {
        buf.push_str(l);
        buf.push('\n');
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(buf.as_bytes())?;
    f.flush()?;
    Ok(())
}

fn to_line<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("record serializes")
}

impl Bank {
    /// Opens (creating if needed) the bank in `dir`.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, BankError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(dir.join(MANIFESTS))?;
        let mut manifests = BTreeMap::new();
        let mut names: Vec<PathBuf> = fs::read_dir(dir.join(MANIFESTS))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        names.sort();
        for p in names {
            let text = fs::read_to_string(&p)?;
            let m: Manifest = serde_json::from_str(&text)
                .map_err(|e| BankError::Corrupt { file: p.display().to_string(), line: 1, msg: e.to_string() })?;
            manifests.insert(m.id.clone(), m);
        }
        let committed: BTreeSet<&String> = manifests.keys().collect();

        let observations: BTreeMap<String, Observation> =
            read_jsonl::<ObsRecord>(&dir.join(OBSERVATIONS))?.into_iter().map(|r| (r.hash, r.observation)).collect();
        let mut blocks: BTreeMap<String, Vec<BlockRecord>> = BTreeMap::new();
        for b in read_jsonl::<BlockRecord>(&dir.join(BLOCKS))? {
            if committed.contains(&b.traj_id) {
                blocks.entry(b.traj_id.clone()).or_default().push(b);
            }
        }
        let mut middle = BTreeMap::new();
        for r in read_jsonl::<MiddleRecord>(&dir.join(MIDDLE))? {
            if committed.contains(&r.traj_id) {
                middle.insert(r.traj_id, r.simplified);
            }
        }
        let mut tops = BTreeMap::new();
        for r in read_jsonl::<TopRecord>(&dir.join(TOP))? {
            if committed.contains(&r.traj_id) {
                tops.insert(r.traj_id.clone(), r);
            }
        }

        let corrupt = |msg: String| BankError::Corrupt { file: dir.display().to_string(), line: 0, msg };
        let obs = |h: &str| observations.get(h).cloned().ok_or_else(|| corrupt(format!("missing observation {h}")));
        let mut trajectories = BTreeMap::new();
        for (id, m) in &manifests {
            let mut bs = blocks.remove(id).unwrap_or_default();
            bs.sort_by_key(|b| b.step);
            if bs.len() != m.steps || bs.iter().enumerate().any(|(i, b)| b.step != i + 1) {
                return Err(corrupt(format!("{id}: expected {} blocks, found {}", m.steps, bs.len())));
            }
            let top = tops.remove(id).ok_or_else(|| corrupt(format!("{id}: missing conclusion")))?;
            if !middle.contains_key(id) {
                return Err(corrupt(format!("{id}: missing simplified trajectory")));
            }
            let mut steps = Vec::with_capacity(bs.len());
            for b in bs {
                steps.push(TrajStep {
                    obs: obs(&b.obs_before)?,
                    code: b.action,
                    hard: b.hard,
                    rho: b.rho,
                    obs_after: obs(&b.obs_after)?,
                });
            }
            let t = FullTrajectory {
                task: m.task.clone(),
                kind: m.kind,
                steps,
                o_final: obs(&m.o_final)?,
                reward: m.reward,
                conclusion: top.conclusion,
                splice: m.splice,
                analyzer: top.analyzer,
                failure: m.failure.clone(),
            };
            trajectories.insert(id.clone(), t);
        }
        let mut order: Vec<(usize, String)> = manifests.values().map(|m| (m.seq, m.id.clone())).collect();
        order.sort();
        Ok(Bank {
            dir,
            observations,
            manifests,
            trajectories,
            middle,
            order: order.into_iter().map(|(_, id)| id).collect(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Ids in storage order.
    pub fn ids(&self) -> &[String] {
        &self.order
    }

    fn next_id(&self, t: &FullTrajectory) -> String {
        format!("{}-s{}-{}-{:03}", t.task.task_type_id, t.task.seed, t.kind.as_str(), self.order.len() + 1)
    }

    /// Validates and persists `t`, returning its id.
    pub fn store(&mut self, t: FullTrajectory) -> Result<String, BankError> {
        t.check()?;
        let id = self.next_id(&t);
        let mut obs_lines = Vec::new();
        let mut hash_of = |o: &Observation, lines: &mut Vec<String>| {
            let h = o.content_hash();
            if !self.observations.contains_key(&h) {
                lines.push(to_line(&ObsRecord { hash: h.clone(), observation: o.clone() }));
                self.observations.insert(h.clone(), o.clone());
            }
            h
        };
        let mut block_lines = Vec::new();
        for (i, s) in t.steps.iter().enumerate() {
            let before = hash_of(&s.obs, &mut obs_lines);
            let after = hash_of(&s.obs_after, &mut obs_lines);
            block_lines.push(to_line(&BlockRecord {
                traj_id: id.clone(),
                step: i + 1,
                obs_before: before,
                action: s.code.clone(),
                hard: s.hard.clone(),
                rho: s.rho.clone(),
                obs_after: after,
            }));
        }
        let o_final = hash_of(&t.o_final, &mut obs_lines);
        let simplified = simplify(&t);
        append_lines(&self.dir.join(OBSERVATIONS), &obs_lines)?;
        append_lines(&self.dir.join(BLOCKS), &block_lines)?;
        append_lines(&self.dir.join(MIDDLE), &[to_line(&MiddleRecord { traj_id: id.clone(), simplified: simplified.clone() })])?;
        append_lines(
            &self.dir.join(TOP),
            &[to_line(&TopRecord {
                traj_id: id.clone(),
                kind: t.kind,
                reward: t.reward,
                conclusion: t.conclusion.clone(),
                analyzer: t.analyzer.clone(),
            })],
        )?;
        let manifest = Manifest {
            id: id.clone(),
            seq: self.order.len() + 1,
            task: t.task.clone(),
            kind: t.kind,
            steps: t.steps.len(),
            splice: t.splice,
            reward: t.reward,
            o_final,
            failure: t.failure.clone(),
        };
        let path = self.dir.join(MANIFESTS).join(format!("{id}.json"));
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n")?;
        fs::rename(&tmp, &path)?;
        self.manifests.insert(id.clone(), manifest);
        self.middle.insert(id.clone(), simplified);
        self.trajectories.insert(id.clone(), t);
        self.order.push(id.clone());
        Ok(id)
    }

    pub fn get(&self, id: &str) -> Result<&FullTrajectory, BankError> {
        self.trajectories.get(id).ok_or_else(|| BankError::UnknownTrajectory(id.to_string()))
    }

    pub fn manifest(&self, id: &str) -> Result<&Manifest, BankError> {
        self.manifests.get(id).ok_or_else(|| BankError::UnknownTrajectory(id.to_string()))
    }

    pub fn simplified(&self, id: &str) -> Result<&SimplifiedTrajectory, BankError> {
        self.middle.get(id).ok_or_else(|| BankError::UnknownTrajectory(id.to_string()))
    }

    /// `fetch_info`: the simplified run when `step` is `None`, otherwise the
    /// 1-based interaction block.
    pub fn fetch_info(&self, id: &str, step: Option<usize>) -> Result<String, BankError> {
        match step {
            None => Ok(self.simplified(id)?.render()),
            Some(s) => render_block(id, self.get(id)?, s),
        }
    }

    /// Checks that the stored middle and top layers agree with the blocks.
    pub fn verify_layers(&self, id: &str) -> Result<(), BankError> {
        let t = self.get(id)?;
        t.check()?;
        if simplify(t) != *self.simplified(id)? {
            return Err(BankError::InvariantViolation(format!("{id}: middle layer differs from its blocks")));
        }
        if self.simplified(id)?.conclusion != t.conclusion {
            return Err(BankError::InvariantViolation(format!("{id}: top layer differs from the middle layer")));
        }
        Ok(())
    }

    /// Renders one layer. `step` picks a single block of the bottom layer;
    /// without it every block is printed.
    pub fn layer(&self, id: &str, layer: Layer, step: Option<usize>) -> Result<String, BankError> {
        let t = self.get(id)?;
        match (layer, step) {
            (Layer::Bottom, Some(s)) => render_block(id, t, s),
            (Layer::Bottom, None) => {
                let blocks: Result<Vec<String>, BankError> = (1..=t.steps.len()).map(|s| render_block(id, t, s)).collect();
                Ok(blocks?.join("\n"))
            }
            (Layer::Middle, _) => Ok(self.simplified(id)?.render()),
            (Layer::Top, _) => {
                let mut s = format!("conclusion: {}\n", t.conclusion.conclusion);
                if let Some(r) = &t.conclusion.reflection {
                    s.push_str(&format!("reflection: {r}\n"));
                }
                if let Some(f) = &t.failure {
                    s.push_str(&format!("failure: {f}\n"));
                }
                if let Some(a) = &t.analyzer {
                    s.push_str(&format!("resume: {}\nplan: {}\n", if a.resume { "Y" } else { "N" }, a.plan_list));
                }
                Ok(s)
            }
        }
    }

    /// Human-readable summary for `inspect`.
    pub fn describe(&self, id: &str) -> Result<String, BankError> {
        let m = self.manifest(id)?;
        let mut s = format!(
            "id: {}\ntask: {} (seed {})\ninstruction: {}\nkind: {}\nsteps: {}\nreward: {}\n",
            m.id,
            m.task.task_type_id,
            m.task.seed,
            m.task.instruction,
            m.kind.as_str(),
            m.steps,
            m.reward
        );
        if let Some(sp) = m.splice {
            s.push_str(&format!("splice: {sp}\n"));
        }
        s.push('\n');
        s.push_str(&self.fetch_info(id, None)?);
        Ok(s)
    }
}

impl InfoSource for Bank {
    fn fetch(&self, traj_id: &str, step: Option<usize>) -> Result<String, String> {
        self.fetch_info(traj_id, step).map_err(|e| e.to_string())
    }
}
