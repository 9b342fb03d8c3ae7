use pcc_event::io::{
    decode_binary, load_stream, read_stream, save_stream, sidecar_path, write_stream, StreamFormat,
    HEADER_LEN, RECORD_LEN,
};
use pcc_event::pipeline::{self, PipelineConfig, ALARMS_HEADER, METRICS_HEADER};
use pcc_event::{Event, EventStream, Polarity, SensorGeometry};

fn sensor() -> SensorGeometry {
    SensorGeometry::default_sensor()
}

fn encode(stream: &EventStream) -> Vec<u8> {
    let mut bytes = Vec::new();
    write_stream(stream, &mut bytes, StreamFormat::Binary).unwrap();
    bytes
}

fn record(t: u64, x: u16, y: u16, p: i8) -> Vec<u8> {
    let mut r = t.to_le_bytes().to_vec();
    r.extend(x.to_le_bytes());
    r.extend(y.to_le_bytes());
    r.push(p as u8);
    r
}

fn with_records(records: &[Vec<u8>]) -> Vec<u8> {
    let mut bytes = encode(&EventStream::empty(sensor(), 10_000).unwrap());
    bytes[30..38].copy_from_slice(&(records.len() as u64).to_le_bytes());
    for r in records {
        bytes.extend(r);
    }
    bytes
}

#[test]
fn empty_stream_is_header_only() {
    let bytes = encode(&EventStream::empty(sensor(), 0).unwrap());
    assert_eq!(bytes.len(), HEADER_LEN);
    assert_eq!(&bytes[0..4], b"PCEV");
    assert_eq!(u64::from_le_bytes(bytes[30..38].try_into().unwrap()), 0);
}

#[test]
fn single_event_is_one_record() {
    let e = Event::new(120, 90, 1_000, Polarity::Negative);
    let stream = EventStream::new(sensor(), vec![e], 2_000).unwrap();
    let bytes = encode(&stream);
    assert_eq!(bytes.len(), HEADER_LEN + RECORD_LEN);
    assert_eq!(&bytes[HEADER_LEN..], record(1_000, 120, 90, -1).as_slice());
    assert_eq!(decode_binary(&bytes).unwrap(), stream);
}

#[test]
fn x_equal_to_width_is_rejected() {
    let bytes = with_records(&[record(10, 240, 0, 1)]);
    let err = decode_binary(&bytes).unwrap_err().to_string();
    assert!(err.contains("coordinate out of bounds"), "{err}");
    assert!(err.starts_with(&format!("byte {HEADER_LEN}:")), "{err}");
}

#[test]
fn decreasing_time_is_rejected() {
    let bytes = with_records(&[record(20, 1, 1, 1), record(10, 2, 2, -1)]);
    let err = decode_binary(&bytes).unwrap_err().to_string();
    assert!(err.contains("events unsorted"), "{err}");
    assert!(
        err.starts_with(&format!("byte {}:", HEADER_LEN + RECORD_LEN)),
        "{err}"
    );
}

#[test]
fn csv_stream_rejects_unsorted_rows() {
    let mut kv = pcc_event::io::sidecar(&EventStream::empty(sensor(), 100).unwrap());
    kv.insert("event_count", 2);
    let text = "t_us,x,y,p\n20,1,1,1\n10,1,1,-1\n";
    let err = read_stream(text.as_bytes(), StreamFormat::Csv, Some(&kv))
        .unwrap_err()
        .to_string();
    assert!(err.contains("events unsorted"), "{err}");
}

#[test]
fn files_round_trip_in_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let events = vec![
        Event::new(0, 0, 0, Polarity::Positive),
        Event::new(239, 179, 5, Polarity::Negative),
        Event::new(3, 4, 5, Polarity::Positive),
    ];
    let stream = EventStream::from_unsorted(sensor(), events, 10).unwrap();
    for (name, format) in [
        ("s.pcev", StreamFormat::Binary),
        ("s.csv", StreamFormat::Csv),
    ] {
        let path = dir.path().join(name);
        save_stream(&path, &stream, format).unwrap();
        assert_eq!(load_stream(&path, format).unwrap(), stream);
        assert_eq!(sidecar_path(&path).exists(), format == StreamFormat::Csv);
    }
}

#[test]
fn missing_file_error_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("absent.pcev");
    let err = load_stream(&path, StreamFormat::Binary)
        .unwrap_err()
        .to_string();
    assert!(err.contains("absent.pcev"), "{err}");
}

#[test]
fn zero_window_run_writes_header_only_files() {
    let empty = EventStream::empty(sensor(), 500_000).unwrap();
    let output = pipeline::run(&empty, &empty, &PipelineConfig::default()).unwrap();
    assert!(output.records.is_empty());
    assert_eq!(output.summary.total_windows, 0);

    let dir = tempfile::tempdir().unwrap();
    let written = pipeline::write_records(&output, dir.path()).unwrap();
    assert_eq!(written.len(), 3);
    let read = |name: &str| std::fs::read_to_string(dir.path().join(name)).unwrap();
    assert_eq!(read("metrics.csv"), format!("{METRICS_HEADER}\n"));
    assert_eq!(read("alarms.csv"), format!("{ALARMS_HEADER}\n"));
    assert!(read("summary.kv").contains("total_windows = 0"));
}

#[test]
fn write_records_names_the_failing_path() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("not_a_dir");
    std::fs::write(&blocker, "x").unwrap();
    let empty = EventStream::empty(sensor(), 0).unwrap();
    let output = pipeline::run(&empty, &empty, &PipelineConfig::default()).unwrap();
    let err = pipeline::write_records(&output, &blocker).unwrap_err();
    assert!(err.to_string().contains("not_a_dir"), "{err}");
}
