//! Crafted malformed inputs: each is rejected with a diagnostic that names the
//! file and the place of the problem.

use gradcert::error::{FormatError, Location};
use gradcert::idx::{decode_dataset, encode_images, encode_labels, parse_images, parse_labels};
use gradcert::model_io::from_json;
use gradcert::tabular::{parse_tabular, Schema};

fn images() -> Vec<u8> {
    encode_images(2, 2, &[vec![0, 255, 128, 64], vec![1, 2, 3, 4]])
}

fn schema(text: &str) -> Schema {
    toml::from_str(text).unwrap()
}

fn offset(e: &FormatError) -> u64 {
    match e.location {
        Location::Offset(o) => o,
        ref other => panic!("expected a byte offset, got {other:?}"),
    }
}

#[test]
fn image_file_with_label_magic() {
    let mut b = images();
    b[3] = 0x01;
    let e = parse_images(&b, "img.idx").unwrap_err();
    assert_eq!(offset(&e), 0);
    assert_eq!(e.to_string(), "img.idx: byte offset 0: bad magic 0x00000801, expected 0x00000803");
}

#[test]
fn label_file_with_image_magic() {
    let mut b = encode_labels(&[1, 2]);
    b[3] = 0x03;
    let e = parse_labels(&b, "lab.idx").unwrap_err();
    assert_eq!(offset(&e), 0);
    assert!(e.message.contains("bad magic 0x00000803"));
}

#[test]
fn header_cut_short() {
    let e = parse_images(&images()[..10], "img.idx").unwrap_err();
    assert_eq!(offset(&e), 8);
    assert!(e.message.contains("truncated header"));
}

#[test]
fn pixel_data_cut_short() {
    let b = images();
    let e = parse_images(&b[..b.len() - 3], "img.idx").unwrap_err();
    assert_eq!(offset(&e), (b.len() - 3) as u64);
    assert!(e.message.contains("truncated data: expected 8 bytes from offset 16, found 5"));
}

#[test]
fn trailing_bytes_after_pixels() {
    let mut b = images();
    b.extend([9, 9]);
    let e = parse_images(&b, "img.idx").unwrap_err();
    assert_eq!(offset(&e), 24);
    assert!(e.message.contains("2 trailing bytes"));
}

#[test]
fn zero_sized_images() {
    let b = encode_images(0, 2, &[vec![], vec![]]);
    let e = parse_images(&b, "img.idx").unwrap_err();
    assert!(e.message.contains("empty image dimensions 0x2"));
}

#[test]
fn label_count_differs_from_image_count() {
    let e = decode_dataset(&images(), "img.idx", &encode_labels(&[1, 2, 3]), "lab.idx").unwrap_err();
    assert_eq!(e.file, "lab.idx");
    assert!(e.message.contains("3 labels for 2 images"));
}

#[test]
fn csv_cell_that_is_not_a_number() {
    let e = parse_tabular("age,hours,y\n30,40,1\n41,lots,0\n", "people.csv", &schema("target = \"y\"")).unwrap_err();
    assert_eq!(e.location, Location::Cell { row: 2, column: "hours".into() });
    assert_eq!(e.to_string(), "people.csv: row 2, column 'hours': cannot parse 'lots' as a number");
}

#[test]
fn csv_row_with_missing_field() {
    let e = parse_tabular("age,hours,y\n30,40,1\n41,0\n", "people.csv", &schema("target = \"y\"")).unwrap_err();
    assert_eq!(e.location, Location::Row(2));
}

#[test]
fn csv_without_the_target_column() {
    let e = parse_tabular("age,hours\n30,40\n", "people.csv", &schema("target = \"income\"")).unwrap_err();
    assert_eq!(e.to_string(), "people.csv: target column 'income' is missing from the header");
}

#[test]
fn csv_with_header_only() {
    let e = parse_tabular("age,y\n", "people.csv", &schema("target = \"y\"")).unwrap_err();
    assert!(e.message.contains("no data rows"));
}

#[test]
fn model_document_of_another_format() {
    let e = from_json(r#"{"format":"onnx","version":1,"input_shape":[2],"layers":[]}"#, "m.json").unwrap_err();
    assert!(e.to_string().contains("unknown format 'onnx'"));
    let e = from_json("{\"format\":\"gradcert-model\"", "m.json").unwrap_err();
    assert!(e.to_string().starts_with("m.json: invalid model document"));
}
