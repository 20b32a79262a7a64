use hlgt_web::{cycle_assignment, interval_overlap, positional_table};

#[test]
fn overlap_accepts_reversed_endpoints() {
    let a = interval_overlap(0.0, 0.4, 0.2, 0.6);
    let b = interval_overlap(0.4, 0.0, 0.6, 0.2);
    assert_eq!(a, b);
    assert!((a[0] - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!((a[2], a[3]), (0.0, 0.6));
    let apart = interval_overlap(0.0, 0.2, 0.3, 0.5);
    assert!((apart[1] + 0.2).abs() < 1e-12);
}

#[test]
fn table_has_len_rows_of_dim() {
    let t = positional_table(8, 5);
    assert_eq!(t.len(), 40);
    assert_eq!(&t[..2], &[0.0, 1.0]);
    assert!(positional_table(7, 5).is_empty());
}

#[test]
fn cycle_reports_loss_assignment_and_locations() {
    let clips = [0.0, 0.0, 10.0, 0.0, 0.0, 10.0];
    let phrases = [0.1, 0.0, 10.0, 0.2, 0.0, 9.9];
    let out = cycle_assignment(&clips, &phrases);
    assert_eq!(out.len(), 1 + 9 + 3);
    assert!((out[0] - (-1.0f64).exp()).abs() < 1e-6);
    for (k, loc) in out[10..].iter().enumerate() {
        assert!((loc - (k + 1) as f64).abs() < 1e-6);
    }
    assert!(cycle_assignment(&[], &phrases).is_empty());
}
