use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Check;
use crate::error::{ensure, Result};
use crate::events::{build_activity_map, build_time_surface, EventRecord, EventStream, Polarity, Resolution};

pub(crate) fn random_stream(rng: &mut ChaCha8Rng, side: usize, n: usize) -> Result<EventStream> {
    let mut times: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    times.sort_by(f64::total_cmp);
    let records = times
        .into_iter()
        .map(|t| EventRecord {
            x: rng.random_range(0..side) as u16,
            y: rng.random_range(0..side) as u16,
            t,
            polarity: if rng.random_bool(0.5) { Polarity::Positive } else { Polarity::Negative },
        })
        .collect();
    EventStream::new(Resolution::new(side, side), records, 0.0, 1.0)
}

fn check_stream(stream: &EventStream, rng: &mut ChaCha8Rng) -> Result<()> {
    let res = stream.resolution();
    let t_ref = rng.random_range(0.0..1.0);
    let tau = rng.random_range(0.01..0.5);
    let surface = build_time_surface::<f64>(stream, t_ref, tau)?;
    for y in 0..res.height {
        for x in 0..res.width {
            for (ch, pol) in [Polarity::Positive, Polarity::Negative].into_iter().enumerate() {
                let latest = stream
                    .records()
                    .iter()
                    .filter(|r| r.x as usize == x && r.y as usize == y && r.polarity == pol && r.t <= t_ref)
                    .map(|r| r.t)
                    .fold(None, |m: Option<f64>, t| Some(m.map_or(t, |m| m.max(t))));
                let want = latest.map_or(0.0, |t| (-(t_ref - t) / tau).exp());
                let got = surface.at(y, x, ch);
                ensure!(
                    (got - want).abs() <= 1e-12,
                    InvalidInput,
                    "time surface at ({y},{x},{ch}): {got} vs {want}"
                );
            }
        }
    }

    let mut t0 = rng.random_range(0.0..1.0);
    let mut t1 = rng.random_range(0.0..1.0);
    if t0 > t1 {
        std::mem::swap(&mut t0, &mut t1);
    }
    let map = build_activity_map(stream, t0, t1)?;
    let mut counts = vec![0u32; res.pixels()];
    for r in stream.records() {
        if r.t >= t0 && r.t <= t1 {
            counts[r.y as usize * res.width + r.x as usize] += 1;
        }
    }
    ensure!(map.counts == counts, InvalidInput, "activity counts differ from naive accumulation");
    Ok(())
}

pub(super) fn run(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = (0..50)
        .try_for_each(|i| {
            let n = rng.random_range(0..1000);
            let s = random_stream(&mut rng, 16, n)?;
            check_stream(&s, &mut rng).map_err(|e| crate::Error::InvalidInput(format!("stream {i}: {e}")))
        })
        .map(|_| "50 random streams match".to_string());
    vec![Check::from_result("time surface and activity vs direct formulas", r)]
}
