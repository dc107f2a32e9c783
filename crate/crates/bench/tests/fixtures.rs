use invarlab_bench::{cone_problem, oscillating, prototype_system, EXPRESSION};
use invarlab_core::certificates::check;
use invarlab_core::{parse, CheckOptions, MarginKind};

#[test]
fn cone_fixture_is_feasible() {
    assert!(check(&cone_problem(), MarginKind::Lemma1, &CheckOptions::default()).unwrap().pass);
}

#[test]
fn fixtures_build() {
    assert_eq!(oscillating().eval(0.0).unwrap(), 0.0);
    assert_eq!(prototype_system().dim(), 2);
    assert!(parse(EXPRESSION).unwrap().eval(&("V", 0.3)).unwrap().is_finite());
}
