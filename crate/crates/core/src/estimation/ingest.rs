use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HEADER: [&str; 5] = ["year", "market_id", "firm_id", "buyer_id", "value"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransactionRecord {
    pub year: i32,
    pub market_id: String,
    pub firm_id: String,
    pub buyer_id: String,
    pub value: f64,
}

impl TransactionRecord {
    fn check(&self) -> std::result::Result<(), String> {
        if self.market_id.is_empty() || self.firm_id.is_empty() || self.buyer_id.is_empty() {
            return Err("ids must be non-empty".into());
        }
        if !(self.value > 0.0) || !self.value.is_finite() {
            return Err(format!("value must be positive, got {}", self.value));
        }
        Ok(())
    }
}

/// Parses a transaction CSV with the exact header
/// `year,market_id,firm_id,buyer_id,value`.
pub fn read_transactions<R: Read>(reader: R) -> Result<Vec<TransactionRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(Error::Malformed {
            line: 1,
            message: format!("expected header {}", HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for row in rdr.deserialize::<TransactionRecord>() {
        let rec = row.map_err(|e| Error::Malformed {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        rec.check().map_err(|message| Error::Malformed {
            line: out.len() as u64 + 2,
            message,
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_transactions<W: Write>(writer: W, records: &[TransactionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct IngestOptions {
    /// Firms whose annual value falls below this are treated as out of the
    /// panel that year.
    pub min_firm_value: Option<f64>,
}

/// One firm in one market-year.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowCell {
    pub market_id: String,
    pub year: i32,
    pub firm_id: String,
    /// Single-supplier buyers at the end of the year.
    pub buyers: u64,
    /// Buyer-count share within the market-year.
    pub share: f64,
    /// Share in the previous year (0 if the firm had no buyers then).
    pub lagged_share: f64,
    /// Buyers not linked to any panel firm the previous year.
    pub new_inflow: u64,
    /// Buyers linked to another panel firm the previous year.
    pub poached_inflow: u64,
    /// Firms with buyers in this market-year.
    pub n_firms: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestStats {
    pub rows: u64,
    /// Duplicate `(year, firm, buyer)` rows merged into one link.
    pub merged_rows: u64,
    /// Buyer-years removed because the buyer had several suppliers in the
    /// year or the year before.
    pub dropped_buyer_years: u64,
    pub kept_buyer_years: u64,
    /// Firm-years removed by the value threshold.
    pub dropped_firm_years: u64,
    /// Market-years without a previous year or with fewer than two firms.
    pub excluded_market_years: Vec<(String, i32)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowPanel {
    /// Sorted by market, year, firm.
    pub cells: Vec<FlowCell>,
    pub stats: IngestStats,
}

impl FlowPanel {
    pub fn years(&self) -> Vec<i32> {
        let mut y: Vec<i32> = self.cells.iter().map(|c| c.year).collect();
        y.sort_unstable();
        y.dedup();
        y
    }
}

/// Reads CSV and builds the flow panel.
pub fn ingest_transactions<R: Read>(reader: R, opts: &IngestOptions) -> Result<FlowPanel> {
    ingest_records(&read_transactions(reader)?, opts)
}

/// Interns strings to dense indices.
#[derive(Default)]
struct Interner {
    index: HashMap<String, u32>,
    names: Vec<String>,
}

impl Interner {
    fn get(&mut self, s: &str) -> u32 {
        if let Some(&i) = self.index.get(s) {
            return i;
        }
        let i = self.names.len() as u32;
        self.index.insert(s.to_owned(), i);
        self.names.push(s.to_owned());
        i
    }
}

#[derive(Default, Clone, Copy)]
struct Tally {
    buyers: u64,
    new_inflow: u64,
    poached: u64,
}

/// Builds the flow panel from parsed records: merges duplicates, applies the
/// value threshold and the single-supplier filter, computes buyer-count
/// shares and classifies each buyer's arrival at its firm.
pub fn ingest_records(records: &[TransactionRecord], opts: &IngestOptions) -> Result<FlowPanel> {
    let mut stats = IngestStats {
        rows: records.len() as u64,
        ..IngestStats::default()
    };
    let mut markets = Interner::default();
    let mut firms = Interner::default();
    let mut buyers = Interner::default();
    // firm index -> market index
    let mut firm_market: Vec<u32> = Vec::new();
    let mut links: Vec<(i32, u32, u32, f64)> = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        r.check().map_err(|message| Error::Malformed {
            line: i as u64 + 2,
            message,
        })?;
        let m = markets.get(&r.market_id);
        // firm ids are scoped to their market
        let f = firms.get(&format!("{}\u{1f}{}", r.market_id, r.firm_id));
        if f as usize == firm_market.len() {
            firm_market.push(m);
        }
        links.push((r.year, f, buyers.get(&r.buyer_id), r.value));
    }
    links.sort_unstable_by_key(|a| (a.0, a.1, a.2));
    links.dedup_by(|later, kept| {
        if (later.0, later.1, later.2) == (kept.0, kept.1, kept.2) {
            kept.3 += later.3;
            true
        } else {
            false
        }
    });
    stats.merged_rows = records.len() as u64 - links.len() as u64;

    if let Some(threshold) = opts.min_firm_value {
        let mut firm_value: HashMap<(i32, u32), f64> = HashMap::new();
        for &(year, f, _, v) in &links {
            *firm_value.entry((year, f)).or_default() += v;
        }
        let small: HashSet<(i32, u32)> = firm_value
            .into_iter()
            .filter(|(_, v)| *v < threshold)
            .map(|(k, _)| k)
            .collect();
        stats.dropped_firm_years = small.len() as u64;
        links.retain(|&(year, f, _, _)| !small.contains(&(year, f)));
    }

    // (year, buyer) -> (a supplier, number of suppliers)
    let mut suppliers: HashMap<(i32, u32), (u32, u32)> = HashMap::with_capacity(links.len());
    for &(year, f, b, _) in &links {
        suppliers.entry((year, b)).and_modify(|e| e.1 += 1).or_insert((f, 1));
    }
    let n_suppliers = |year: i32, b: u32| suppliers.get(&(year, b)).map_or(0, |e| e.1);

    let mut tallies: BTreeMap<(u32, i32), HashMap<u32, Tally>> = BTreeMap::new();
    let mut dropped: HashSet<(i32, u32)> = HashSet::new();
    for &(year, f, b, _) in &links {
        if n_suppliers(year, b) != 1 || n_suppliers(year - 1, b) > 1 {
            dropped.insert((year, b));
            continue;
        }
        stats.kept_buyer_years += 1;
        let t = tallies
            .entry((firm_market[f as usize], year))
            .or_default()
            .entry(f)
            .or_default();
        t.buyers += 1;
        match suppliers.get(&(year - 1, b)) {
            None => t.new_inflow += 1,
            Some(&(prev, _)) if prev != f => t.poached += 1,
            Some(_) => {}
        }
    }
    stats.dropped_buyer_years = dropped.len() as u64;

    let firm_name = |f: u32| {
        let full = &firms.names[f as usize];
        full.split_once('\u{1f}').map_or(full.as_str(), |(_, name)| name).to_string()
    };
    let mut cells = Vec::new();
    for ((m, year), firm_tallies) in &tallies {
        let market = &markets.names[*m as usize];
        let prev = tallies.get(&(*m, year - 1));
        if prev.is_none() || firm_tallies.len() < 2 {
            log::info!("market {market} year {year} excluded (no previous year or fewer than two firms)");
            stats.excluded_market_years.push((market.clone(), *year));
            continue;
        }
        let prev = prev.expect("checked");
        let total: u64 = firm_tallies.values().map(|t| t.buyers).sum();
        let prev_total: u64 = prev.values().map(|t| t.buyers).sum();
        for (&f, t) in firm_tallies {
            let lagged = prev.get(&f).map_or(0, |p| p.buyers);
            cells.push(FlowCell {
                market_id: market.clone(),
                year: *year,
                firm_id: firm_name(f),
                buyers: t.buyers,
                share: t.buyers as f64 / total as f64,
                lagged_share: lagged as f64 / prev_total as f64,
                new_inflow: t.new_inflow,
                poached_inflow: t.poached,
                n_firms: firm_tallies.len(),
            });
        }
    }
    cells.sort_by(|a, b| (&a.market_id, a.year, &a.firm_id).cmp(&(&b.market_id, b.year, &b.firm_id)));
    stats.excluded_market_years.sort();
    Ok(FlowPanel { cells, stats })
}
