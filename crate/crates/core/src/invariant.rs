//! Offline trace invariant checking.
//!
//! Traces are self-contained: meta records describe the run configuration,
//! so a trace file alone is enough to re-verify every registered invariant
//! — agreement, validity and termination for Byzantine agreement; notice
//! board uniqueness; key-session agreement and exclusion soundness; mutex
//! safety and liveness; anonymity rate constancy; work-item lifecycle
//! legality; differential correctness against the Petri-style oracle; and
//! scope confidentiality.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::oracle;
use crate::trace::TraceRecord;
use crate::workflow::{ItemState, ProcessDefinition};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckError {
    #[error("malformed trace: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone)]
pub struct InvariantReport {
    pub name: String,
    pub passed: bool,
    pub checks: u64,
    pub detail: String,
}

impl InvariantReport {
    fn pass(name: &str, checks: u64, detail: String) -> Self {
        InvariantReport { name: name.to_string(), passed: true, checks, detail }
    }

    fn fail(name: &str, checks: u64, detail: String) -> Self {
        InvariantReport { name: name.to_string(), passed: false, checks, detail }
    }
}

struct Meta {
    roster: Vec<String>,
    corrupted: BTreeSet<String>,
    aba: BTreeMap<String, (usize, usize, BTreeMap<String, u8>)>,
    notice_slots: Vec<String>,
    gk: BTreeMap<String, (Vec<String>, Option<String>)>,
    mutexes: Vec<String>,
    anon_out_rate: Option<usize>,
    wf_def: Option<ProcessDefinition>,
    wf_scopes: BTreeMap<String, (String, bool, BTreeSet<String>)>,
    wf_bindings: BTreeMap<String, String>,
    wf_expect_abort: bool,
    timed_out: bool,
}

fn parse_meta(records: &[TraceRecord]) -> Result<Meta, CheckError> {
    let mut meta = Meta {
        roster: Vec::new(),
        corrupted: BTreeSet::new(),
        aba: BTreeMap::new(),
        notice_slots: Vec::new(),
        gk: BTreeMap::new(),
        mutexes: Vec::new(),
        anon_out_rate: None,
        wf_def: None,
        wf_scopes: BTreeMap::new(),
        wf_bindings: BTreeMap::new(),
        wf_expect_abort: false,
        timed_out: false,
    };
    for r in records {
        if r.kind == "timeout" {
            meta.timed_out = true;
        }
        if r.kind != "meta" {
            continue;
        }
        match r.inst.as_str() {
            "roster" => meta.roster = r.detail.split(',').map(String::from).collect(),
            "adversary" => {
                if r.detail != "none" {
                    for part in r.detail.split(',') {
                        if let Some((p, _)) = part.split_once(':') {
                            meta.corrupted.insert(p.to_string());
                        }
                    }
                }
            }
            "anon" => {
                let rate = r
                    .detail
                    .split(' ')
                    .find_map(|f| f.strip_prefix("out_rate:"))
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| CheckError::Malformed("anon meta".into()))?;
                meta.anon_out_rate = Some(rate);
            }
            "wf:def" => {
                let bytes = hex::decode(&r.detail)
                    .map_err(|_| CheckError::Malformed("wf:def hex".into()))?;
                let text = String::from_utf8(bytes)
                    .map_err(|_| CheckError::Malformed("wf:def utf8".into()))?;
                let def = ProcessDefinition::from_toml_str(&text)
                    .map_err(|e| CheckError::Malformed(format!("wf:def: {e}")))?;
                meta.wf_def = Some(def);
            }
            "wf:case" => {
                for field in r.detail.split(' ') {
                    if let Some(b) = field.strip_prefix("bindings:") {
                        for pair in b.split(',') {
                            if let Some((participant, party)) = pair.split_once('=') {
                                meta.wf_bindings
                                    .insert(participant.to_string(), party.to_string());
                            }
                        }
                    }
                }
            }
            other => {
                if let Some(inst) = other.strip_prefix("aba:") {
                    let mut n = 0;
                    let mut t = 0;
                    let mut inputs = BTreeMap::new();
                    for field in r.detail.split(' ') {
                        if let Some(v) = field.strip_prefix("n:") {
                            n = v.parse().unwrap_or(0);
                        } else if let Some(v) = field.strip_prefix("t:") {
                            t = v.parse().unwrap_or(0);
                        } else if let Some(v) = field.strip_prefix("inputs:") {
                            for pair in v.split(',') {
                                if let Some((p, bit)) = pair.split_once('=') {
                                    inputs.insert(p.to_string(), bit.parse().unwrap_or(0));
                                }
                            }
                        }
                    }
                    meta.aba.insert(inst.to_string(), (n, t, inputs));
                } else if let Some(slot) = other.strip_prefix("notice:") {
                    meta.notice_slots.push(slot.to_string());
                } else if let Some(session) = other.strip_prefix("gk:") {
                    let mut members = Vec::new();
                    let mut equivocator = None;
                    for field in r.detail.split(' ') {
                        if let Some(v) = field.strip_prefix("members:") {
                            members = v.split('+').map(String::from).collect();
                        } else if let Some(v) = field.strip_prefix("equivocator:") {
                            if v != "-" {
                                equivocator = Some(v.to_string());
                            }
                        }
                    }
                    meta.gk.insert(session.to_string(), (members, equivocator));
                } else if let Some(id) = other.strip_prefix("mutex:") {
                    meta.mutexes.push(id.to_string());
                } else if let Some(scope) = other.strip_prefix("wf:scope:") {
                    let mut element = String::new();
                    let mut sensitive = false;
                    let mut members = BTreeSet::new();
                    for field in r.detail.split(' ') {
                        if let Some(v) = field.strip_prefix("element:") {
                            element = v.to_string();
                        } else if let Some(v) = field.strip_prefix("sensitive:") {
                            sensitive = v == "true";
                        } else if let Some(v) = field.strip_prefix("members:") {
                            members = v.split('+').map(String::from).collect();
                        }
                    }
                    meta.wf_scopes
                        .insert(scope.to_string(), (element, sensitive, members));
                } else if other == "wf:expect" {
                    meta.wf_expect_abort = !r.detail.contains("omission:- ")
                        || !r.detail.ends_with("tamper:-");
                }
            }
        }
    }
    if meta.roster.is_empty() {
        return Err(CheckError::Malformed("no roster meta record".into()));
    }
    Ok(meta)
}

/// Run every applicable invariant over a parsed trace.
pub fn check_trace(records: &[TraceRecord]) -> Result<Vec<InvariantReport>, CheckError> {
    let meta = parse_meta(records)?;
    let mut out = Vec::new();

    if !meta.aba.is_empty() {
        out.extend(check_aba(records, &meta));
    }
    if !meta.notice_slots.is_empty() {
        out.push(check_notice_uniqueness(records));
    }
    if !meta.gk.is_empty() {
        out.extend(check_gk(records, &meta));
    }
    if !meta.mutexes.is_empty() || records.iter().any(|r| r.proto == "mx") {
        out.push(check_mutex_safety(records));
        out.push(check_mutex_liveness(records, &meta));
    }
    if let Some(rate) = meta.anon_out_rate {
        out.push(check_anon_rate(records, rate));
    }
    if meta.wf_def.is_some() {
        out.push(check_workitem_lifecycle(records));
        out.push(check_differential(records, &meta));
        out.push(check_scope_confidentiality(records, &meta));
    }
    Ok(out)
}

fn check_aba(records: &[TraceRecord], meta: &Meta) -> Vec<InvariantReport> {
    let mut out = Vec::new();
    let honest: Vec<&String> = meta
        .roster
        .iter()
        .filter(|p| !meta.corrupted.contains(*p))
        .collect();
    for (instance, (_n, _t, inputs)) in &meta.aba {
        // decisions per node
        let mut decisions: BTreeMap<String, u8> = BTreeMap::new();
        for r in records {
            if r.kind == "decide" && r.proto == "aba" && r.inst == *instance {
                if let Some(v) = r.detail.strip_prefix("v:") {
                    let bit = v.parse().unwrap_or(2);
                    if let Some(prev) = decisions.get(&r.node) {
                        if *prev != bit {
                            out.push(InvariantReport::fail(
                                "aba-irrevocability",
                                1,
                                format!("{} changed decision in {instance}", r.node),
                            ));
                        }
                    }
                    decisions.insert(r.node.clone(), bit);
                }
            }
        }
        let honest_decisions: BTreeSet<u8> = honest
            .iter()
            .filter_map(|p| decisions.get(*p))
            .copied()
            .collect();
        if honest_decisions.len() > 1 {
            out.push(InvariantReport::fail(
                "aba-agreement",
                honest.len() as u64,
                format!("{instance}: honest parties decided {honest_decisions:?}"),
            ));
        } else {
            out.push(InvariantReport::pass(
                "aba-agreement",
                honest.len() as u64,
                format!("{instance}"),
            ));
        }
        // validity: unanimous honest inputs force that decision
        let honest_inputs: BTreeSet<u8> = honest
            .iter()
            .filter_map(|p| inputs.get(*p))
            .copied()
            .collect();
        if honest_inputs.len() == 1 {
            let want = *honest_inputs.iter().next().unwrap();
            let ok = honest
                .iter()
                .filter_map(|p| decisions.get(*p))
                .all(|d| *d == want);
            if ok {
                out.push(InvariantReport::pass("aba-validity", honest.len() as u64, instance.clone()));
            } else {
                out.push(InvariantReport::fail(
                    "aba-validity",
                    honest.len() as u64,
                    format!("{instance}: unanimous input {want} not decided"),
                ));
            }
        }
        // termination: every honest party decided, without a timeout
        let undecided: Vec<&&String> =
            honest.iter().filter(|p| !decisions.contains_key(**p)).collect();
        if undecided.is_empty() && !meta.timed_out {
            out.push(InvariantReport::pass("aba-termination", honest.len() as u64, instance.clone()));
        } else {
            out.push(InvariantReport::fail(
                "aba-termination",
                honest.len() as u64,
                format!("{instance}: undecided {undecided:?} timeout:{}", meta.timed_out),
            ));
        }
    }
    out
}

fn check_notice_uniqueness(records: &[TraceRecord]) -> InvariantReport {
    // per (key@epoch): at most one attested hash; retrieved values match it
    let mut attested: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for r in records {
        if r.proto == "nb" && r.kind == "attested" {
            attested
                .entry(r.inst.clone())
                .or_default()
                .insert(r.detail.clone());
        }
    }
    let checks = attested.len() as u64;
    for (slot, hashes) in &attested {
        if hashes.len() > 1 {
            return InvariantReport::fail(
                "notice-uniqueness",
                checks,
                format!("{slot} attested {} distinct values", hashes.len()),
            );
        }
    }
    InvariantReport::pass("notice-uniqueness", checks, format!("{} slots", attested.len()))
}

fn check_gk(records: &[TraceRecord], meta: &Meta) -> Vec<InvariantReport> {
    let mut out = Vec::new();
    for (session, (members, equivocator)) in &meta.gk {
        let mut established: BTreeMap<String, String> = BTreeMap::new();
        let mut excluded: BTreeSet<String> = BTreeSet::new();
        for r in records {
            if r.proto == "gk" && r.inst == *session && r.kind == "gk" {
                if let Some(digest) = r.detail.strip_prefix("established:") {
                    established.insert(r.node.clone(), digest.to_string());
                } else if let Some(member_idx) = r.detail.strip_prefix("excluded:") {
                    // member index -> party name
                    if let Ok(idx) = member_idx.parse::<usize>() {
                        if idx >= 1 && idx <= meta.roster.len() {
                            excluded.insert(meta.roster[idx - 1].clone());
                        }
                    }
                }
            }
        }
        let digests: BTreeSet<&String> = established.values().collect();
        if digests.len() > 1 {
            out.push(InvariantReport::fail(
                "gk-agreement",
                established.len() as u64,
                format!("{session}: divergent keys"),
            ));
        } else {
            out.push(InvariantReport::pass(
                "gk-agreement",
                established.len() as u64,
                format!("{session}: {} established", established.len()),
            ));
        }
        match equivocator {
            None => {
                if excluded.is_empty() {
                    out.push(InvariantReport::pass("gk-exclusion", members.len() as u64, session.clone()));
                } else {
                    out.push(InvariantReport::fail(
                        "gk-exclusion",
                        members.len() as u64,
                        format!("{session}: honest member excluded: {excluded:?}"),
                    ));
                }
            }
            Some(e) => {
                let only_equivocator = excluded.iter().all(|x| x == e);
                if only_equivocator {
                    out.push(InvariantReport::pass(
                        "gk-exclusion",
                        members.len() as u64,
                        format!("{session}: excluded {excluded:?}"),
                    ));
                } else {
                    out.push(InvariantReport::fail(
                        "gk-exclusion",
                        members.len() as u64,
                        format!("{session}: excluded {excluded:?}, expected only {e}"),
                    ));
                }
            }
        }
    }
    out
}

fn check_mutex_safety(records: &[TraceRecord]) -> InvariantReport {
    // walk enter/exit in trace order per mutex id
    let mut holders: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut checks = 0;
    for r in records {
        if r.proto != "mx" || r.kind != "mutex" {
            continue;
        }
        let set = holders.entry(r.inst.clone()).or_default();
        match r.detail.as_str() {
            "enter" => {
                set.insert(r.node.clone());
                checks += 1;
                if set.len() > 1 {
                    return InvariantReport::fail(
                        "mutex-safety",
                        checks,
                        format!("{}: simultaneous holders {set:?} at t={}", r.inst, r.time),
                    );
                }
            }
            "exit" => {
                set.remove(&r.node);
            }
            _ => {}
        }
    }
    InvariantReport::pass("mutex-safety", checks, format!("{} mutexes", holders.len()))
}

fn check_mutex_liveness(records: &[TraceRecord], meta: &Meta) -> InvariantReport {
    let mut requests: BTreeMap<(String, String), u64> = BTreeMap::new();
    let mut grants: BTreeMap<(String, String), u64> = BTreeMap::new();
    for r in records {
        if r.proto != "mx" {
            continue;
        }
        match r.kind.as_str() {
            "request" => *requests.entry((r.inst.clone(), r.node.clone())).or_insert(0) += 1,
            "mutex" if r.detail == "enter" => {
                *grants.entry((r.inst.clone(), r.node.clone())).or_insert(0) += 1
            }
            _ => {}
        }
    }
    let checks = requests.len() as u64;
    for (key, want) in &requests {
        let got = grants.get(key).copied().unwrap_or(0);
        if got < *want {
            return InvariantReport::fail(
                "mutex-liveness",
                checks,
                format!("{key:?}: {got}/{want} grants (timeout:{})", meta.timed_out),
            );
        }
    }
    InvariantReport::pass("mutex-liveness", checks, format!("{} requesters", requests.len()))
}

fn check_anon_rate(records: &[TraceRecord], out_rate: usize) -> InvariantReport {
    let mut checks = 0;
    for r in records {
        if r.proto != "anon" || r.kind != "anon" {
            continue;
        }
        if let Some(rest) = r.detail.strip_prefix("emit:") {
            checks += 1;
            let mut parts = rest.split(" links:");
            let emitted: usize = parts
                .next()
                .and_then(|v| v.parse().ok())
                .unwrap_or(usize::MAX);
            if emitted != out_rate {
                return InvariantReport::fail(
                    "anon-rate",
                    checks,
                    format!("{} emitted {emitted} != {out_rate} at t={}", r.node, r.time),
                );
            }
            if let Some(links) = parts.next() {
                for link in links.split(',').filter(|l| !l.is_empty()) {
                    if let Some((_, count)) = link.split_once(':') {
                        if count.parse::<usize>().unwrap_or(usize::MAX) != out_rate {
                            return InvariantReport::fail(
                                "anon-rate",
                                checks,
                                format!("{} link volume {link} != {out_rate}", r.node),
                            );
                        }
                    }
                }
            }
        }
    }
    InvariantReport::pass("anon-rate", checks, format!("{checks} ticks"))
}

fn check_workitem_lifecycle(records: &[TraceRecord]) -> InvariantReport {
    let mut states: BTreeMap<(String, String), ItemState> = BTreeMap::new();
    let mut checks = 0;
    let parse_state = |s: &str| -> Option<ItemState> {
        Some(match s {
            "offered" => ItemState::Offered,
            "allocated" => ItemState::Allocated,
            "started" => ItemState::Started,
            "completed" => ItemState::Completed,
            "failed" => ItemState::Failed,
            "withdrawn" => ItemState::Withdrawn,
            _ => return None,
        })
    };
    for r in records {
        if r.proto != "wf" || r.kind != "workitem" {
            continue;
        }
        let parts: Vec<&str> = r.detail.split(':').collect();
        if parts.len() < 3 {
            return InvariantReport::fail("workitem-legality", checks, format!("bad record {}", r.detail));
        }
        let key = (parts[0].to_string(), parts[1].to_string());
        let Some(next) = parse_state(parts[2]) else {
            return InvariantReport::fail("workitem-legality", checks, format!("bad state {}", parts[2]));
        };
        checks += 1;
        match states.get(&key) {
            None => {
                if next != ItemState::Offered {
                    return InvariantReport::fail(
                        "workitem-legality",
                        checks,
                        format!("{key:?} born in state {}", next.as_str()),
                    );
                }
                states.insert(key, next);
            }
            Some(prev) => {
                if !prev.can_transition_to(next) {
                    return InvariantReport::fail(
                        "workitem-legality",
                        checks,
                        format!("{key:?}: {} -> {}", prev.as_str(), next.as_str()),
                    );
                }
                states.insert(key, next);
            }
        }
    }
    InvariantReport::pass("workitem-legality", checks, format!("{} items", states.len()))
}

fn check_differential(records: &[TraceRecord], meta: &Meta) -> InvariantReport {
    let Some(def) = &meta.wf_def else {
        return InvariantReport::fail("wf-differential", 0, "no definition meta".into());
    };
    // project distributed events onto oracle transition names, in order
    let mut events: Vec<String> = Vec::new();
    let mut max_instance: u32 = 1;
    let mut route_queue: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in records {
        if r.proto != "wf" {
            continue;
        }
        if r.kind == "route" {
            if let Some((task, succ)) = r.detail.split_once("->") {
                route_queue
                    .entry(task.to_string())
                    .or_default()
                    .push(succ.to_string());
            }
        }
    }
    let mut aborted = false;
    for r in records {
        if r.proto != "wf" || aborted {
            continue;
        }
        match r.kind.as_str() {
            "case" if r.detail.starts_with("abort") => aborted = true,
            "workitem" => {
                let parts: Vec<&str> = r.detail.split(':').collect();
                if parts.len() < 3 {
                    continue;
                }
                let task = parts[0];
                let instance: u32 = parts[1].parse().unwrap_or(0);
                max_instance = max_instance.max(instance + 1);
                match parts[2] {
                    "started" => events.push(oracle::t_start(task, instance)),
                    "completed" => {
                        let is_mi = def.task(task).is_some_and(|t| t.multi_instance.is_some());
                        let xor = def.task(task).map(|t| t.split) == Some(crate::workflow::SplitKind::Xor);
                        if is_mi {
                            events.push(oracle::t_complete(task, instance));
                        } else if xor && !def.successors(task).is_empty() {
                            let succ = route_queue
                                .get_mut(task)
                                .and_then(|q| (!q.is_empty()).then(|| q.remove(0)))
                                .unwrap_or_default();
                            events.push(format!("{}:to:{succ}", oracle::t_complete(task, instance)));
                        } else {
                            events.push(oracle::t_complete(task, instance));
                        }
                    }
                    _ => {}
                }
            }
            "mi" => {
                let parts: Vec<&str> = r.detail.split(':').collect();
                match parts.as_slice() {
                    ["enter", task] => events.push(format!("enter:{task}")),
                    ["spawn", task, _i] => events.push(oracle::t_spawn(task)),
                    ["add", task] => events.push(oracle::t_add(task)),
                    ["close", task, _total] => events.push(oracle::t_close(task)),
                    ["merge", task, _count] => {
                        let xor = def.task(task).map(|t| t.split)
                            == Some(crate::workflow::SplitKind::Xor);
                        if xor && !def.successors(task).is_empty() {
                            let succ = route_queue
                                .get_mut(*task)
                                .and_then(|q| (!q.is_empty()).then(|| q.remove(0)))
                                .unwrap_or_default();
                            events.push(format!("{}:to:{succ}", oracle::t_merge(task)));
                        } else {
                            events.push(oracle::t_merge(task));
                        }
                    }
                    _ => {}
                }
            }
            _ => {}
        }
    }
    let mut net = match oracle::build(def, max_instance) {
        Ok(n) => n,
        Err(e) => return InvariantReport::fail("wf-differential", 0, e.to_string()),
    };
    let checks = events.len() as u64;
    for event in &events {
        // fire silent joins until the projected event becomes enabled
        loop {
            if net.enabled(event).is_ok() {
                net.fire(event).expect("enabled");
                break;
            }
            let joins: Vec<String> = net
                .enabled_set()
                .into_iter()
                .filter(|t| t.starts_with("join:"))
                .collect();
            if joins.is_empty() {
                return InvariantReport::fail(
                    "wf-differential",
                    checks,
                    format!("event {event} not a legal firing: {}", net.enabled(event).unwrap_err()),
                );
            }
            net.fire(&joins[0]).expect("enabled");
        }
    }
    InvariantReport::pass("wf-differential", checks, format!("{} events replayed", events.len()))
}

fn check_scope_confidentiality(records: &[TraceRecord], meta: &Meta) -> InvariantReport {
    let mut checks = 0;
    for r in records {
        if r.proto != "wf" || r.kind != "data" {
            continue;
        }
        if let Some(rest) = r.detail.strip_prefix("decrypt-ok:") {
            checks += 1;
            let Some((element, party_idx)) = rest.split_once(':') else {
                return InvariantReport::fail("scope-confidentiality", checks, "bad record".into());
            };
            let scope = format!("scope/{element}");
            let Some((_, _, members)) = meta.wf_scopes.get(&scope) else {
                return InvariantReport::fail(
                    "scope-confidentiality",
                    checks,
                    format!("decrypt of unknown scope {scope}"),
                );
            };
            // members are participant names; map through bindings to party
            // names, then compare with the decrypting node
            let party_names: BTreeSet<&String> = members
                .iter()
                .filter_map(|m| meta.wf_bindings.get(m))
                .collect();
            let idx: usize = party_idx.parse().unwrap_or(0);
            let node_name = meta.roster.get(idx.saturating_sub(1));
            let inside = node_name.is_some_and(|n| party_names.contains(n));
            if !inside {
                return InvariantReport::fail(
                    "scope-confidentiality",
                    checks,
                    format!("{element} decrypted outside scope by party {party_idx}"),
                );
            }
        }
    }
    InvariantReport::pass("scope-confidentiality", checks, format!("{checks} decrypts"))
}
