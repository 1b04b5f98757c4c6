mod common;

use common::{fuzz_config, fuzz_geometry, CommandGen};
use fasim::refcheck::apply_to_ftl;
use fasim::Ftl;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn audit_holds_after_every_command(seed in any::<u64>()) {
        let g = fuzz_geometry();
        let mut ftl = Ftl::new(g, fuzz_config()).unwrap();
        let mut gen = CommandGen::new(seed, &g);
        for i in 0..3_000 {
            let cmd = gen.next_command();
            let _ = apply_to_ftl(&mut ftl, &cmd);
            prop_assert_eq!(ftl.audit(), Ok(()), "after command {} {:?}", i, cmd);
        }
    }

    #[test]
    fn interval_probe_matches_linear_scan(seed in any::<u64>()) {
        let g = fuzz_geometry();
        let mut ftl = Ftl::new(g, fuzz_config()).unwrap();
        let mut gen = CommandGen::new(seed, &g);
        for _ in 0..50 {
            for _ in 0..40 {
                let _ = apply_to_ftl(&mut ftl, &gen.next_command());
            }
            let reg = ftl.fa_registry();
            for lba in 0..ftl.logical_capacity() + 4 {
                prop_assert_eq!(reg.probe(lba), reg.probe_linear(lba));
            }
        }
    }
}

#[test]
fn counters_stay_conserved() {
    let g = fuzz_geometry();
    let mut ftl = Ftl::new(g, fuzz_config()).unwrap();
    for cmd in CommandGen::new(42, &g).take(20_000) {
        let _ = apply_to_ftl(&mut ftl, &cmd);
        let c = ftl.counters();
        assert_eq!(c.physical_programs, c.logical_pages_written + c.copyback_programs);
    }
    assert!(ftl.counters().erases > 0);
}
