use std::sync::Arc;

use asthmon_core::fetcher::{Fetcher, FixtureAdapter, PollPlan, Sample, Scope, Source, SourceSpec};
use asthmon_core::model::{IndoorAirSample, PatientId};
use asthmon_core::observation::Stream;
use asthmon_core::simulator::gen_environment;
use asthmon_core::store::Store;
use asthmon_core::Season;
use chrono::{DateTime, Duration, NaiveDate, Utc};
use proptest::prelude::*;

fn t0() -> DateTime<Utc> {
    "2018-04-01T00:00:00Z".parse().unwrap()
}

fn outdoor_fetcher(store: Arc<Store>, days: usize, seed: u64) -> Fetcher {
    let start = NaiveDate::from_ymd_opt(2018, 4, 1).unwrap();
    let samples = gen_environment(Season::Spring, "r", start, days, seed).into_iter().map(Sample::Outdoor).collect();
    let adapter = Arc::new(FixtureAdapter::new(samples));
    let mut fetcher = Fetcher::new(store, t0());
    for source in [Source::Pollen, Source::AqiPm25, Source::AqiOzone, Source::WeatherTempHumidity] {
        fetcher.add(SourceSpec::new(source, Scope::Region("r".into())), adapter.clone(), t0());
    }
    fetcher
}

fn indoor_samples(pid: &str, days: i64) -> Vec<Sample> {
    (0..days * 288)
        .map(|i| {
            Sample::Indoor(IndoorAirSample {
                patient_id: PatientId::new(pid),
                timestamp: t0() + Duration::minutes(5 * i),
                temperature: 70.0,
                humidity: 40.0,
                particulate_matter: 8.0,
                voc: 0.2,
                co2: 600.0,
                global_pollution_index: 12.0,
            })
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn polls_match_horizon_over_cadence(
        cadence_min in 1i64..=720,
        horizon_min in 0i64..=4 * 24 * 60,
        steps in proptest::collection::vec(1i64..=180, 1..200),
    ) {
        let spec = SourceSpec::new(Source::AqiPm25, Scope::Region("r".into()))
            .with_cadence(Duration::minutes(cadence_min))
            .unwrap();
        let mut plan = PollPlan::new([&spec], t0());
        let end = t0() + Duration::minutes(horizon_min);
        let mut now = t0();
        let mut polls = 0i64;
        let mut steps = steps.into_iter().cycle();
        loop {
            // Drain everything due at `now`, one interval per tick.
            loop {
                let (due, next) = plan.schedule_tick(now);
                if due.is_empty() {
                    break;
                }
                polls += due.len() as i64;
                plan = next;
            }
            if now == end {
                break;
            }
            now = (now + Duration::minutes(steps.next().unwrap())).min(end);
        }
        let expected = horizon_min / cadence_min;
        prop_assert!((polls - expected).abs() <= 1, "polls {} expected {}", polls, expected);
    }

    #[test]
    fn fixture_replay_is_deterministic(seed in any::<u64>(), ticks in proptest::collection::vec(1i64..=240, 1..30)) {
        let run = || {
            let store = Arc::new(Store::in_memory());
            let mut fetcher = outdoor_fetcher(store.clone(), 3, seed);
            let mut now = t0();
            for step in &ticks {
                now += Duration::minutes(*step);
                fetcher.run_until(now).unwrap();
            }
            let text = store.read().observations_ndjson();
            text
        };
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn indoor_air_volume_is_288_per_day() {
    let store = Arc::new(Store::in_memory());
    let adapter = Arc::new(FixtureAdapter::new(indoor_samples("p", 3)));
    let mut fetcher = Fetcher::new(store.clone(), t0());
    fetcher.add(SourceSpec::new(Source::IndoorAir, Scope::Patient(PatientId::new("p"))), adapter, t0());

    // Hourly driver: each hour drains twelve five-minute polls.
    let mut per_hour = Vec::new();
    for h in 1..=48 {
        let before = store.read().len();
        fetcher.run_until(t0() + Duration::hours(h)).unwrap();
        per_hour.push(store.read().len() - before);
    }
    // The first window (t0 - 5min, t0] holds the sample stamped t0.
    assert_eq!(per_hour[0], 13);
    assert!(per_hour[1..].iter().all(|n| *n == 12), "{per_hour:?}");

    let state = store.read();
    let day = |d: i64| {
        let (from, to) = (t0() + Duration::days(d), t0() + Duration::days(d + 1));
        state.range("p", Stream::IndoorEnv, from, to).count()
    };
    assert_eq!(day(0), 288);
}

#[test]
fn outdoor_volume_follows_default_cadences() {
    let store = Arc::new(Store::in_memory());
    let mut fetcher = outdoor_fetcher(store.clone(), 3, 4);
    fetcher.run_until(t0() + Duration::days(2)).unwrap();
    let state = store.read();
    let from = t0() + Duration::days(1);
    let day: Vec<_> = state.range("r", Stream::OutdoorEnv, from, from + Duration::days(1)).collect();
    // Two pollen readings, 24 each of pm2.5, ozone, temperature and humidity.
    assert_eq!(day.len(), 2 + 4 * 24);
}
