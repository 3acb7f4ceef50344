use std::collections::HashSet;
use std::path::Path;

use ffcs_core::bench::Instance;
use ffcs_core::demand::{ActivityMatrix, Tensor3, TravelTimeTensor, TripStats};
use ffcs_core::hexgrid::GeoPoint;
use ffcs_core::synthetic::{self, SyntheticCity, ZoneInstance};
use ffcs_core::{Error, Result, SLOTS_PER_DAY};

use crate::config::RunConfig;

/// Zone-level inputs, before calibration.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub trips: TripStats,
    pub activity: ActivityMatrix,
    pub travel: TravelTimeTensor,
    pub presence: Vec<f64>,
    /// Expected parked vehicles per zone over one day; may be empty.
    pub car_profile: Vec<Vec<f64>>,
    pub centers: Vec<GeoPoint>,
}

impl Dataset {
    pub fn zones(&self) -> usize {
        self.trips.zones()
    }

    pub fn from_city(city: &SyntheticCity) -> Self {
        Self {
            trips: city.trips.clone(),
            activity: city.activity.clone(),
            travel: city.travel.clone(),
            presence: city.presence.clone(),
            car_profile: city.car_profile.clone(),
            centers: city.grid.centers(),
        }
    }

    pub fn from_zones(zones: &ZoneInstance, cell_centers: &[GeoPoint]) -> Self {
        let centers = zones
            .members
            .iter()
            .map(|m| GeoPoint::mean(m.iter().map(|&k| cell_centers[k])).unwrap_or(GeoPoint::new(0.0, 0.0)))
            .collect();
        Self {
            trips: zones.trips.clone(),
            activity: zones.activity.clone(),
            travel: zones.travel.clone(),
            presence: zones.presence.clone(),
            car_profile: zones.car_profile.clone(),
            centers,
        }
    }

    /// Reads the files written by [`Dataset::write`] or by `gen-data`.
    pub fn read(dir: &Path) -> Result<Self> {
        for name in ["cells.csv", "trips.csv", "activity.csv", "travel.csv"] {
            let path = dir.join(name);
            if !path.is_file() {
                return Err(Error::data(path, "required input file is missing"));
            }
        }
        let cells_path = dir.join("cells.csv");
        let mut rdr = csv::Reader::from_path(&cells_path)?;
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h.trim() == name);
        let (Some(ci), Some(xi), Some(yi)) = (col("cell"), col("x"), col("y")) else {
            return Err(Error::data(&cells_path, "expected columns cell, x, y"));
        };
        let pi = col("presence");
        let mut centers = Vec::new();
        let mut presence = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let num = |k: usize| -> Result<f64> {
                rec.get(k)
                    .and_then(|v| v.trim().parse().ok())
                    .ok_or_else(|| Error::data(&cells_path, format!("row {}: bad number", line + 2)))
            };
            if num(ci)? as usize != line {
                return Err(Error::data(&cells_path, format!("row {}: ids must be 0, 1, 2, ... in order", line + 2)));
            }
            centers.push(GeoPoint::new(num(xi)?, num(yi)?));
            presence.push(match pi {
                Some(k) => num(k)?,
                None => 1.0,
            });
        }
        let n = centers.len();
        if n == 0 {
            return Err(Error::EmptyServiceArea);
        }
        let p = SLOTS_PER_DAY;
        let trips = Tensor3::read_csv(&dir.join("trips.csv"), n, p, 0.0)?;
        let activity = ActivityMatrix::read_csv(&dir.join("activity.csv"), n, p)?;
        let mut travel = TravelTimeTensor::new(Tensor3::read_csv(&dir.join("travel.csv"), n, p, f64::NAN)?);
        if travel.missing() > 0 {
            let dist: Vec<Vec<f64>> = centers.iter().map(|a| centers.iter().map(|b| a.dist(b).max(1.0)).collect()).collect();
            travel.impute(Some(&dist), 400.0)?;
        }
        let cars_path = dir.join("cars.csv");
        let car_profile = if cars_path.exists() { read_cars(&cars_path, n, p)? } else { Vec::new() };
        Ok(Self { trips, activity, travel, presence, car_profile, centers })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.trips.write_csv(&dir.join("trips.csv"), true)?;
        self.activity.write_csv(&dir.join("activity.csv"))?;
        self.travel.tensor().write_csv(&dir.join("travel.csv"), true)?;
        let mut w = csv::Writer::from_path(dir.join("cells.csv"))?;
        w.write_record(["cell", "x", "y", "presence"])?;
        for (k, c) in self.centers.iter().enumerate() {
            w.write_record([k.to_string(), c.x.to_string(), c.y.to_string(), self.presence[k].to_string()])?;
        }
        w.flush()?;
        if !self.car_profile.is_empty() {
            let mut w = csv::Writer::from_path(dir.join("cars.csv"))?;
            w.write_record(["cell", "t", "cars"])?;
            for (k, series) in self.car_profile.iter().enumerate() {
                for (s, v) in series.iter().enumerate() {
                    w.write_record([k.to_string(), (s + 1).to_string(), v.to_string()])?;
                }
            }
            w.flush()?;
        }
        Ok(())
    }

    /// Keeps the first `h` slots of every tensor.
    pub fn truncate(&self, h: usize) -> Self {
        let n = self.zones();
        if h >= self.trips.slots() {
            return self.clone();
        }
        let mut activity = ActivityMatrix::zeros(n, h);
        for i in 0..n {
            for t in 1..=h {
                activity.set(i, t, self.activity.get(i, t));
            }
        }
        Self {
            trips: Tensor3::from_fn(n, h, |i, j, t| self.trips.get(i, j, t)),
            activity,
            travel: TravelTimeTensor::new(Tensor3::from_fn(n, h, |i, j, t| self.travel.get(i, j, t))),
            ..self.clone()
        }
    }

    pub fn instance(&self, cfg: &RunConfig) -> Result<Instance> {
        let d = self.truncate(cfg.horizon);
        let mut inst = Instance::calibrate(&d.trips, &d.activity, d.travel.clone(), d.presence.clone(), cfg.delta)?;
        if !self.car_profile.is_empty() {
            inst.car_history = synthetic::car_history(&self.car_profile, cfg.history_days, cfg.seed);
        }
        Ok(inst)
    }
}

fn read_cars(path: &Path, n: usize, p: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![vec![0.0; p]; n];
    let mut seen = HashSet::new();
    let mut rdr = csv::Reader::from_path(path)?;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = || Error::data(path, format!("row {}: expected cell,t,cars", line + 2));
        let field = |k: usize| rec.get(k).map(str::trim).ok_or_else(bad);
        let i: usize = field(0)?.parse().map_err(|_| bad())?;
        let t: usize = field(1)?.parse().map_err(|_| bad())?;
        let v: f64 = field(2)?.parse().map_err(|_| bad())?;
        if i >= n || t == 0 || t > p || !(v >= 0.0) {
            return Err(bad());
        }
        out[i][t - 1] = v;
        seen.insert((i, t));
    }
    if seen.len() != n * p {
        return Err(Error::data(path, format!("expected {} rows, found {}", n * p, seen.len())));
    }
    Ok(out)
}

/// The synthetic city from the configuration, or the one described by
/// `spec.json` in the data directory.
pub fn city(cfg: &RunConfig) -> Result<SyntheticCity> {
    let spec = match &cfg.data_dir {
        Some(dir) => {
            let path = dir.join("spec.json");
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Error::data(&path, format!("cell-level commands need the generator spec: {e}")))?;
            serde_json::from_str(&text)?
        }
        None => cfg.synthetic.clone(),
    };
    synthetic::generate(&spec)
}

pub fn dataset(cfg: &RunConfig) -> Result<Dataset> {
    let d = match &cfg.data_dir {
        Some(dir) => Dataset::read(dir)?,
        None => Dataset::from_city(&synthetic::generate(&cfg.synthetic)?),
    };
    if let Some(n) = cfg.zones {
        if n != d.zones() {
            return Err(Error::data(
                cfg.data_dir.as_deref().unwrap_or(Path::new("<synthetic>")),
                format!("configuration expects {n} zones, data has {}", d.zones()),
            ));
        }
    }
    Ok(d)
}
