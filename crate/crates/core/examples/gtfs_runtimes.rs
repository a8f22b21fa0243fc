//! Build a runtime table from a tiny GTFS feed and join it onto events.
//!
//! cargo run --example gtfs_runtimes

use trainrel::gtfs::read_runtime_table;

const TRIPS: &str = "route_id,service_id,trip_id,trip_short_name
R1,WK,t1,8701
R1,WK,t2,8703
";

const STOP_TIMES: &str = "trip_id,arrival_time,departure_time,stop_id,stop_sequence
t1,07:00:00,07:00:00,Cst,1
t1,07:55:00,07:57:00,Upp,2
t1,09:10:00,09:10:00,Gävle,3
t2,23:30:00,23:30:00,Cst,1
t2,24:40:00,24:42:00,Upp,2
";

const CALENDAR_DATES: &str = "service_id,date,exception_type
WK,20240304,1
WK,20240305,1
";

fn main() -> trainrel::Result<()> {
    let dir = std::env::temp_dir().join(format!("trainrel-gtfs-{}", std::process::id()));
    std::fs::create_dir_all(&dir).expect("temp dir");
    for (name, body) in [("trips.txt", TRIPS), ("stop_times.txt", STOP_TIMES), ("calendar_dates.txt", CALENDAR_DATES)] {
        std::fs::write(dir.join(name), body).expect("write feed");
    }
    let table = read_runtime_table(&dir)?;
    println!("{} (train, date, station) runtimes", table.len());
    for (train, station) in [("8701", "Upp"), ("8701", "Gävle"), ("8703", "Upp")] {
        let key = trainrel::data::RuntimeKey {
            train_id: train.into(),
            service_date: chrono::NaiveDate::from_ymd_opt(2024, 3, 4).unwrap(),
            station: station.into(),
        };
        if let Some((to_here, total)) = table.get(&key) {
            println!("  {train} at {station}: {to_here:.2} h from origin, {total:.2} h end to end");
        }
    }
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
