use std::ffi::CStr;
use std::ptr;

use hiergibbs_ffi::*;

#[test]
fn gap_routes_agree() {
    let (mut a, mut b) = (0.0, 0.0);
    unsafe {
        assert_eq!(hg_gap_closed_normal(3, 1.0, 1.0, HgGapVariant::P2P3, &mut a), HgStatus::Ok);
        assert_eq!(hg_gap_matrix_normal(0.0, 1.0, 1.0, 3, HgGapVariant::P2P3, &mut b), HgStatus::Ok);
    }
    assert!((a - 0.5625).abs() < 1e-12);
    assert!((a - b).abs() < 1e-10);
}

#[test]
fn errors_map_to_codes_and_messages() {
    let mut x = 0.0;
    let s = unsafe { hg_gap_closed_normal(1, 1.0, 1.0, HgGapVariant::Extended, &mut x) };
    assert_eq!(s, HgStatus::Domain);
    assert!(last_error().contains("m >= 2"));
    let s = unsafe { hg_gap_matrix_normal(0.0, 1.0, 1.0, 1, HgGapVariant::Extended, &mut x) };
    assert_eq!(s, HgStatus::Singular);
    assert_eq!(unsafe { hg_mixing_bound(0.75, 2.0, 0.2, ptr::null_mut()) }, HgStatus::NullPointer);
    assert_eq!(unsafe { hg_mixing_bound(-0.1, 2.0, 0.2, &mut x) }, HgStatus::Domain);
    assert_eq!(unsafe { hg_mixing_bound(0.75, 2.0, 0.2, &mut x) }, HgStatus::Ok);
    assert!((x - 2.160964047443681).abs() < 1e-12);
}

#[test]
fn chain_handle_round_trip() {
    let prior = HgPrior {
        mu_kind: HgMuPrior::NormalOverTau,
        mu_mean: 0.0,
        mu_scale: 1000.0,
        tau1_shape: 1.0,
        tau1_rate: 1.0,
        tau0_shape: 1.0,
        tau0_rate: 1.0,
    };
    unsafe {
        let mut ds: *mut HgDataset = ptr::null_mut();
        assert_eq!(hg_dataset_simulate(HgModel::BinomialLogit, 5, 1.0, 1.0, 1.0, 50, 3, &mut ds), HgStatus::Ok);
        let mut j = 0;
        assert_eq!(hg_dataset_num_groups(ds, &mut j), HgStatus::Ok);
        assert_eq!(j, 50);

        let mut ch: *mut HgChain = ptr::null_mut();
        let s = hg_chain_run(ds, HgBlocking::TwoBlock, &prior, 0.0, 1.0, 1.0, 600, 100, 1, 9, &mut ch);
        assert_eq!(s, HgStatus::Ok, "{}", last_error());
        let (mut rows, mut cols) = (0, 0);
        hg_chain_rows(ch, &mut rows);
        hg_chain_cols(ch, &mut cols);
        assert_eq!(rows, 500);
        assert_eq!(cols, 2 + 50 + 2);
        let mut name = ptr::null();
        assert_eq!(hg_chain_column_name(ch, 1, &mut name), HgStatus::Ok);
        assert_eq!(CStr::from_ptr(name).to_str().unwrap(), "tau1");
        assert_eq!(hg_chain_column_name(ch, cols, &mut name), HgStatus::InvalidArgument);
        let mut buf = vec![0.0; rows];
        assert_eq!(hg_chain_column(ch, 1, buf.as_mut_ptr(), rows), HgStatus::Ok);
        assert!(buf.iter().all(|t| *t > 0.0));
        assert_eq!(hg_chain_column(ch, 1, buf.as_mut_ptr(), rows - 1), HgStatus::InvalidArgument);
        let mut iat = 0.0;
        assert_eq!(hg_chain_max_iat(ch, &mut iat), HgStatus::Ok);
        assert!(iat >= 1.0);

        // the model is fixed by the dataset, so an incompatible blocking fails
        let mut bad: *mut HgChain = ptr::null_mut();
        let s = hg_chain_run(ds, HgBlocking::Extended, &prior, 0.0, 1.0, 1.0, 600, 100, 1, 9, &mut bad);
        assert_ne!(s, HgStatus::Ok);
        assert!(bad.is_null());

        hg_chain_free(ch);
        hg_dataset_free(ds);
        hg_chain_free(ptr::null_mut());
        hg_dataset_free(ptr::null_mut());
    }
}

#[test]
fn null_handles_rejected() {
    let mut n = 0;
    assert_eq!(unsafe { hg_dataset_num_groups(ptr::null(), &mut n) }, HgStatus::NullPointer);
    assert_eq!(unsafe { hg_chain_rows(ptr::null(), &mut n) }, HgStatus::NullPointer);
    assert!(last_error().contains("null"));
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/hiergibbs.h")).unwrap();
    for f in [
        "hg_last_error_message",
        "hg_gap_closed_normal",
        "hg_gap_matrix_normal",
        "hg_mixing_bound",
        "hg_dataset_simulate",
        "hg_dataset_free",
        "hg_chain_run",
        "hg_chain_column_name",
        "hg_chain_max_iat",
        "hg_chain_free",
    ] {
        assert!(h.contains(f), "{f} missing from header");
    }
}
