use proptest::prelude::*;
use qsr::sparse::{LorentzianAtom, SparseSpectrum};
use qsr::symbolic::{kernel, project, AxisBins, BinningConfig, SymbolSet};

fn symbol_set() -> impl Strategy<Value = SymbolSet> {
    prop::collection::btree_set("[a-e]{1,2}", 0..8).prop_map(|names| SymbolSet::from_names(names).unwrap())
}

fn binning() -> BinningConfig {
    BinningConfig {
        omega_bins: AxisBins::new(vec![0.0, 1.0, 2.5, 5.0], vec!["zero", "low", "mid", "high"]).unwrap(),
        gamma_bins: AxisBins::new(vec![0.01, 0.3], vec!["narrow", "broad"]).unwrap(),
        amp_bins: AxisBins::new(vec![0.0, 1.0], vec!["weak", "strong"]).unwrap(),
        negligible_eps: 0.05,
    }
}

fn atom() -> impl Strategy<Value = LorentzianAtom> {
    (-2.0..10.0f64, 1e-3..2.0f64, 1e-3..5.0f64).prop_map(|(w, g, a)| LorentzianAtom::new(w, g, a).unwrap())
}

proptest! {
    #[test]
    fn kernel_symmetric_and_bounded(a in symbol_set(), b in symbol_set()) {
        let k = kernel(&a, &b);
        prop_assert_eq!(k, kernel(&b, &a));
        prop_assert!(k <= a.name_count().min(b.name_count()));
        prop_assert_eq!(kernel(&a, &a), a.name_count());
    }

    #[test]
    fn every_atom_yields_a_predicate(atoms in prop::collection::vec(atom(), 0..6)) {
        let sp = SparseSpectrum::new(atoms, 0.0).unwrap();
        let preds = project(&sp, &binning()).unwrap();
        for i in 0..sp.len() {
            prop_assert!(preds.for_atom(i).count() >= 1, "atom {i} has no predicate");
        }
    }

    #[test]
    fn raising_frequency_never_lowers_the_bin(w in -2.0..10.0f64, dw in 0.0..5.0f64) {
        let bins = binning().omega_bins;
        match (bins.bin(w), bins.bin(w + dw)) {
            (Some(lo), Some(hi)) => prop_assert!(lo <= hi),
            (Some(_), None) => prop_assert!(false, "moved below the first edge"),
            _ => {}
        }
    }
}
