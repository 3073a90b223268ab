mod common;

use proptest::prelude::*;
use tally_core::{parse, parse_metric, to_dsl};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn printing_then_parsing_gives_the_same_tree(m in common::gen::metric()) {
        let text = to_dsl(&m).unwrap();
        let parsed = parse_metric(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(&parsed, &m, "{}", text);
        prop_assert_eq!(to_dsl(&parsed).unwrap(), text);
    }

    #[test]
    fn programs_reach_a_fixed_point(ms in proptest::collection::vec(common::gen::metric(), 1..4)) {
        let src = ms.iter().map(|m| to_dsl(m).unwrap()).collect::<Vec<_>>().join(" ; ");
        let first = parse(&src).unwrap();
        let printed = first.to_string();
        let second = parse(&printed).unwrap();
        prop_assert_eq!(first.metrics(), second.metrics());
        prop_assert_eq!(second.to_string(), printed);
    }

    #[test]
    fn parser_never_panics(src in "[a-z_()|,*/+\\- 0-9\"`.=;]{0,40}") {
        let _ = parse(&src);
    }
}

#[test]
fn hand_written_programs_round_trip() {
    let programs = [
        r#"sum(lost) / count(lost) as "churn""#,
        r#"sum(lost)/count(lost) as "churn" | percent_change(experiment, "control")"#,
        r#"sum(lost)/count(lost) as "churn" | percent_change(experiment, "control") | bootstrap(1000, 42)"#,
        r#"mean(EMP) | absolute_change(STATE_NAME, "PA") | absolute_change(PERIOD, "Before")"#,
        "mean(x) + 1.96 * sd(x) / count(x) ** 0.5",
        "sum(x) | distribution(g) | jackknife(unit = cookie)",
        "(sum(x) | distribution(g)) - (mean(x) | percent_change(arm, 0))",
        "quantile(`order total`, 0.9); count(`null`) as \"n\"",
    ];
    for src in programs {
        let first = parse(src).unwrap();
        let second = parse(&first.to_string()).unwrap();
        assert_eq!(first.metrics(), second.metrics(), "{src}");
    }
}

#[test]
fn error_positions_point_at_the_problem() {
    let cases = [
        ("sum(", (1, 5)),
        ("sum(x) +", (1, 9)),
        ("sum(x)\n  | bogus(y)", (2, 5)),
        ("sum(x) | distribution()", (1, 23)),
        ("(sum(x)", (1, 8)),
        ("sum(x) as", (1, 10)),
    ];
    for (src, pos) in cases {
        let e = parse(src).unwrap_err();
        assert_eq!((e.line, e.col), pos, "{src}: {e}");
    }
}
