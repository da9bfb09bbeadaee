use super::special::{chi2_sf, f_sf, ln_choose, normal_sf, t_two_sided_p};
use super::{DegenerateFlag, SampleData, StatsError, TestFamily, TestOutcome};

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sum of squared deviations about the mean.
fn ss(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum()
}

fn sample_sd(x: &[f64]) -> f64 {
    (ss(x) / (x.len() as f64 - 1.0)).sqrt()
}

fn require_len(x: &[f64], need: usize) -> Result<(), StatsError> {
    if x.len() < need {
        return Err(StatsError::InsufficientData { need, got: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::InvalidInput("non-finite observation".into()));
    }
    Ok(())
}

fn base(family: TestFamily, statistic: f64, df1: f64, p: f64, group_ns: Vec<u64>) -> TestOutcome {
    TestOutcome {
        family,
        statistic,
        df1,
        df2: None,
        p,
        group_ns,
        group_means: None,
        group_sds: None,
        degenerate: DegenerateFlag::None,
        effect_r: None,
        table: None,
        p0: None,
    }
}

/// Pooled-variance (Student) two-sample t-test.
pub fn t_test_independent(a: &[f64], b: &[f64]) -> Result<TestOutcome, StatsError> {
    require_len(a, 2)?;
    require_len(b, 2)?;
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let (m1, m2) = (mean(a), mean(b));
    let df = n1 + n2 - 2.0;
    let pooled = (ss(a) + ss(b)) / df;
    let mut out = base(TestFamily::TIndependent, 0.0, df, 1.0, vec![a.len() as u64, b.len() as u64]);
    out.group_means = Some(vec![m1, m2]);
    out.group_sds = Some(vec![sample_sd(a), sample_sd(b)]);
    if pooled == 0.0 {
        degenerate_two_group(&mut out, m1 - m2);
        return Ok(out);
    }
    let t = (m1 - m2) / (pooled * (1.0 / n1 + 1.0 / n2)).sqrt();
    out.statistic = t;
    out.p = t_two_sided_p(t, df);
    Ok(out)
}

fn degenerate_two_group(out: &mut TestOutcome, diff: f64) {
    if diff == 0.0 {
        out.degenerate = DegenerateFlag::ZeroVarianceIdentical;
        out.statistic = 0.0;
        out.p = 1.0;
    } else {
        out.degenerate = DegenerateFlag::ZeroVarianceSeparated;
        out.statistic = if out.family == TestFamily::AnovaOneway {
            f64::INFINITY
        } else {
            diff.signum() * f64::INFINITY
        };
        out.p = 0.0;
    }
}

/// Paired t-test on x − y, df = n − 1.
pub fn t_test_paired(x: &[f64], y: &[f64]) -> Result<TestOutcome, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::InvalidInput("paired series differ in length".into()));
    }
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let mut out = one_sample_core(&diffs, 0.0, TestFamily::TPaired)?;
    out.group_means = Some(vec![mean(x), mean(y)]);
    out.group_sds = Some(vec![sample_sd(x), sample_sd(y)]);
    Ok(out)
}

/// One-sample t-test against `mu0`, df = n − 1.
pub fn t_test_one_sample(x: &[f64], mu0: f64) -> Result<TestOutcome, StatsError> {
    one_sample_core(x, mu0, TestFamily::TOneSample)
}

fn one_sample_core(x: &[f64], mu0: f64, family: TestFamily) -> Result<TestOutcome, StatsError> {
    require_len(x, 2)?;
    let n = x.len() as f64;
    let m = mean(x);
    let sd = sample_sd(x);
    let mut out = base(family, 0.0, n - 1.0, 1.0, vec![x.len() as u64]);
    out.group_means = Some(vec![m]);
    out.group_sds = Some(vec![sd]);
    if sd == 0.0 {
        degenerate_two_group(&mut out, m - mu0);
        return Ok(out);
    }
    let t = (m - mu0) / (sd / n.sqrt());
    out.statistic = t;
    out.p = t_two_sided_p(t, n - 1.0);
    Ok(out)
}

/// One-way between-subjects ANOVA.
pub fn anova_oneway(groups: &[Vec<f64>]) -> Result<TestOutcome, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::InvalidInput("ANOVA needs at least two groups".into()));
    }
    for g in groups {
        require_len(g, 2)?;
    }
    let k = groups.len() as f64;
    let n: f64 = groups.iter().map(|g| g.len() as f64).sum();
    let grand = groups.iter().flatten().sum::<f64>() / n;
    let means: Vec<f64> = groups.iter().map(|g| mean(g)).collect();
    let ss_between: f64 = groups
        .iter()
        .zip(&means)
        .map(|(g, m)| g.len() as f64 * (m - grand) * (m - grand))
        .sum();
    let ss_within: f64 = groups.iter().map(|g| ss(g)).sum();
    let (df1, df2) = (k - 1.0, n - k);
    let mut out = base(
        TestFamily::AnovaOneway,
        0.0,
        df1,
        1.0,
        groups.iter().map(|g| g.len() as u64).collect(),
    );
    out.df2 = Some(df2);
    out.group_sds = Some(groups.iter().map(|g| sample_sd(g)).collect());
    out.group_means = Some(means);
    if ss_within == 0.0 {
        degenerate_two_group(&mut out, ss_between);
        return Ok(out);
    }
    let f = (ss_between / df1) / (ss_within / df2);
    out.statistic = f;
    out.p = f_sf(f, df1, df2);
    Ok(out)
}

/// Pearson χ² test of independence, no continuity correction.
pub fn chi_square_contingency(table: &[Vec<u64>]) -> Result<TestOutcome, StatsError> {
    let rows = table.len();
    let cols = table.first().map_or(0, |r| r.len());
    if rows < 2 || cols < 2 || table.iter().any(|r| r.len() != cols) {
        return Err(StatsError::InvalidInput("table must be rectangular and at least 2x2".into()));
    }
    let row_sums: Vec<f64> = table.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let col_sums: Vec<f64> = (0..cols)
        .map(|j| table.iter().map(|r| r[j]).sum::<u64>() as f64)
        .collect();
    if row_sums.iter().chain(&col_sums).any(|&m| m == 0.0) {
        return Err(StatsError::ZeroMargin);
    }
    let total: f64 = row_sums.iter().sum();
    let mut chi2 = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &obs) in row.iter().enumerate() {
            let expected = row_sums[i] * col_sums[j] / total;
            chi2 += (obs as f64 - expected).powi(2) / expected;
        }
    }
    let df = ((rows - 1) * (cols - 1)) as f64;
    let mut out = base(
        TestFamily::ChiSquare,
        chi2,
        df,
        chi2_sf(chi2, df),
        row_sums.iter().map(|&r| r as u64).collect(),
    );
    out.table = Some(table.to_vec());
    Ok(out)
}

/// Exact two-sided binomial test: sums the probabilities of every outcome
/// no more likely than the observed one.
pub fn binomial_test(k: u64, n: u64, p0: f64) -> Result<TestOutcome, StatsError> {
    if n == 0 || k > n {
        return Err(StatsError::InvalidInput(format!("need 0 <= k <= n, n >= 1 (k={k}, n={n})")));
    }
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(StatsError::InvalidInput(format!("baseline p0={p0} outside (0,1)")));
    }
    let ln_pmf = |i: u64| ln_choose(n, i) + i as f64 * p0.ln() + (n - i) as f64 * (1.0 - p0).ln();
    let observed = ln_pmf(k);
    // Relative slack absorbs rounding between mirror-image outcomes.
    let cutoff = observed + 1e-7;
    let p: f64 = (0..=n)
        .map(ln_pmf)
        .filter(|&l| l <= cutoff)
        .map(f64::exp)
        .sum();
    let mut out = base(TestFamily::Binomial, k as f64 / n as f64, 1.0, p.min(1.0), vec![n]);
    out.p0 = Some(p0);
    Ok(out)
}

/// Pearson correlation with its t-test, df = n − 2.
pub fn pearson_correlation(x: &[f64], y: &[f64]) -> Result<TestOutcome, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::InvalidInput("series differ in length".into()));
    }
    require_len(x, 3)?;
    require_len(y, 3)?;
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let (sxx, syy) = (ss(x), ss(y));
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::DegenerateVariance);
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let n = x.len() as f64;
    let df = n - 2.0;
    let t = if r.abs() == 1.0 {
        r * f64::INFINITY
    } else {
        r * (df / (1.0 - r * r)).sqrt()
    };
    let mut out = base(TestFamily::Correlation, t, df, t_two_sided_p(t, df), vec![x.len() as u64]);
    out.effect_r = Some(r);
    out.group_means = Some(vec![mx, my]);
    Ok(out)
}

/// Mid-ranks (1-based) of the pooled sample.
fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start;
        while end + 1 < idx.len() && values[idx[end + 1]] == values[idx[start]] {
            end += 1;
        }
        let r = (start + end) as f64 / 2.0 + 1.0;
        for &i in &idx[start..=end] {
            ranks[i] = r;
        }
        start = end + 1;
    }
    ranks
}

/// Mann-Whitney U of the first sample with a tie-corrected normal
/// approximation; records r_rb = 1 − 2U/(n1·n2).
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<TestOutcome, StatsError> {
    require_len(a, 2)?;
    require_len(b, 2)?;
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = mid_ranks(&pooled);
    let rank_sum_a: f64 = ranks[..a.len()].iter().sum();
    let u = rank_sum_a - n1 * (n1 + 1.0) / 2.0;

    let n = n1 + n2;
    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let mu = n1 * n2 / 2.0;
    let p = if var > 0.0 {
        (2.0 * normal_sf(((u - mu) / var.sqrt()).abs())).min(1.0)
    } else {
        1.0
    };
    let mut out = base(TestFamily::MannWhitney, u, 1.0, p, vec![a.len() as u64, b.len() as u64]);
    out.effect_r = Some(1.0 - 2.0 * u / (n1 * n2));
    out.group_means = Some(vec![mean(a), mean(b)]);
    if var == 0.0 {
        out.degenerate = DegenerateFlag::ZeroVarianceIdentical;
    }
    Ok(out)
}

/// Runs `family` on matching sample data.
pub fn run_test(family: TestFamily, data: &SampleData) -> Result<TestOutcome, StatsError> {
    let mismatch = |data: &'static str| StatsError::FamilyDataMismatch { family, data };
    match (family, data) {
        (TestFamily::TIndependent, SampleData::Groups { groups }) if groups.len() == 2 => {
            t_test_independent(&groups[0].1, &groups[1].1)
        }
        (TestFamily::MannWhitney, SampleData::Groups { groups }) if groups.len() == 2 => {
            mann_whitney_u(&groups[0].1, &groups[1].1)
        }
        (TestFamily::AnovaOneway, SampleData::Groups { groups }) => {
            let gs: Vec<Vec<f64>> = groups.iter().map(|(_, g)| g.clone()).collect();
            anova_oneway(&gs)
        }
        (TestFamily::ChiSquare, SampleData::Table { table }) => chi_square_contingency(table),
        (TestFamily::Binomial, SampleData::Binomial { successes, trials, p0 }) => {
            binomial_test(*successes, *trials, *p0)
        }
        (TestFamily::Correlation, SampleData::Paired { x, y }) => pearson_correlation(x, y),
        (TestFamily::TPaired, SampleData::Paired { x, y }) => t_test_paired(x, y),
        (TestFamily::TOneSample, SampleData::OneSample { x, mu0 }) => t_test_one_sample(x, *mu0),
        (_, SampleData::Groups { .. }) => Err(mismatch("group")),
        (_, SampleData::Table { .. }) => Err(mismatch("table")),
        (_, SampleData::Binomial { .. }) => Err(mismatch("binomial")),
        (_, SampleData::Paired { .. }) => Err(mismatch("paired")),
        (_, SampleData::OneSample { .. }) => Err(mismatch("one-sample")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn t_identical_groups() {
        let out = t_test_independent(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(out.statistic, 0.0);
        assert!((out.p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn t_pooled_textbook() {
        // sp² = (2 + 2) / 4 = 1, se = sqrt(2/3), t = -3 / se.
        let out = t_test_independent(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((out.statistic - (-3.0 / (2.0f64 / 3.0).sqrt())).abs() < 1e-12);
        assert!((out.statistic + 3.674).abs() < 5e-4);
        assert_eq!(out.df1, 4.0);
        assert!((out.p - 0.021311641128756727).abs() < 1e-12);
    }

    #[test]
    fn t_constant_groups_flagged() {
        let out = t_test_independent(&[5.0; 3], &[5.0; 3]).unwrap();
        assert_eq!(out.degenerate, DegenerateFlag::ZeroVarianceIdentical);
        let out = t_test_independent(&[5.0; 3], &[2.0; 3]).unwrap();
        assert_eq!(out.degenerate, DegenerateFlag::ZeroVarianceSeparated);
        assert_eq!(out.statistic, f64::INFINITY);
        assert_eq!(out.p, 0.0);
    }

    #[test]
    fn t_requires_two_per_group() {
        assert_eq!(
            t_test_independent(&[1.0], &[1.0, 2.0]),
            Err(StatsError::InsufficientData { need: 2, got: 1 })
        );
    }

    #[test]
    fn anova_identical_and_t_squared() {
        let out = anova_oneway(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(out.statistic, 0.0);
        assert!((out.p - 1.0).abs() < 1e-12);

        let out = anova_oneway(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert!((out.statistic - 13.5).abs() < 1e-10);
        assert_eq!((out.df1, out.df2), (1.0, Some(4.0)));
        let t = t_test_independent(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((out.p - t.p).abs() < 1e-12);
    }

    #[test]
    fn anova_constant_equal_groups_degenerate() {
        let out = anova_oneway(&[vec![2.0; 3], vec![2.0; 3], vec![2.0; 3]]).unwrap();
        assert_eq!(out.degenerate, DegenerateFlag::ZeroVarianceIdentical);
    }

    #[test]
    fn chi_square_uniform_and_zero_margin() {
        let out = chi_square_contingency(&[vec![10, 10], vec![10, 10]]).unwrap();
        assert_eq!(out.statistic, 0.0);
        assert!((out.p - 1.0).abs() < 1e-12);
        assert_eq!(
            chi_square_contingency(&[vec![5, 0], vec![0, 0]]),
            Err(StatsError::ZeroMargin)
        );
    }

    #[test]
    fn chi_square_matches_expected_count_formula() {
        // Brute-force: E_ij = R_i C_j / N, sum (O - E)^2 / E.
        let table = [vec![32u64, 7], vec![9, 30]];
        let n = 78.0;
        let rows = [39.0, 39.0];
        let cols = [41.0, 37.0];
        let mut want = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let e = rows[i] * cols[j] / n;
                want += (table[i][j] as f64 - e).powi(2) / e;
            }
        }
        let out = chi_square_contingency(&table).unwrap();
        assert!((out.statistic - want).abs() < 1e-12);
        assert!((out.statistic - 27.2).abs() < 0.05);
    }

    #[test]
    fn binomial_examples() {
        assert!((binomial_test(5, 10, 0.5).unwrap().p - 1.0).abs() < 1e-12);
        assert!((binomial_test(10, 10, 0.5).unwrap().p - 2f64.powi(-9)).abs() < 1e-15);
        assert!((binomial_test(0, 1, 0.5).unwrap().p - 1.0).abs() < 1e-12);
        assert!(binomial_test(3, 2, 0.5).is_err());
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let out = pearson_correlation(&x, &x).unwrap();
        assert_eq!(out.effect_r, Some(1.0));

        let out = pearson_correlation(&x, &[2.0, 1.0, 4.0, 3.0]).unwrap();
        assert!((out.effect_r.unwrap() - 0.6).abs() < 1e-12);
        // t = r sqrt((n-2)/(1-r^2)) = 0.6 sqrt(2 / 0.64)
        assert!((out.statistic - 0.6 * (2.0f64 / 0.64).sqrt()).abs() < 1e-12);
        assert_eq!(out.df1, 2.0);

        assert_eq!(
            pearson_correlation(&[1.0; 4], &x),
            Err(StatsError::DegenerateVariance)
        );
    }

    /// Counts pairs (a_i > b_j) + ½ ties.
    fn brute_u(a: &[f64], b: &[f64]) -> f64 {
        let mut u = 0.0;
        for x in a {
            for y in b {
                if x > y {
                    u += 1.0;
                } else if x == y {
                    u += 0.5;
                }
            }
        }
        u
    }

    #[test]
    fn mann_whitney_examples() {
        let out = mann_whitney_u(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert!(out.effect_r.unwrap().abs() < 1e-12);

        let out = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(out.statistic, 0.0);
        assert_eq!(out.effect_r, Some(1.0));

        let a = [1.0, 3.0, 5.0];
        let b = [2.0, 4.0, 6.0];
        let out = mann_whitney_u(&a, &b).unwrap();
        assert_eq!(out.statistic, brute_u(&a, &b));
        assert_eq!(out.statistic, 3.0);
    }

    #[test]
    fn paired_and_one_sample_df() {
        let out = t_test_paired(&[1.0, 2.0, 4.0, 8.0], &[0.5, 1.0, 3.0, 6.0]).unwrap();
        assert_eq!(out.df1, 3.0);
        let out = t_test_one_sample(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.0).unwrap();
        assert_eq!(out.df1, 4.0);
        // mean 3, sd sqrt(2.5), t = 3 / (sqrt(2.5)/sqrt(5))
        assert!((out.statistic - 3.0 / (2.5f64.sqrt() / 5f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn run_test_rejects_mismatched_data() {
        let err = run_test(TestFamily::ChiSquare, &SampleData::OneSample { x: vec![1.0], mu0: 0.0 });
        assert!(matches!(err, Err(StatsError::FamilyDataMismatch { .. })));
    }

    proptest! {
        #[test]
        fn anova_is_t_squared(
            a in proptest::collection::vec(-50.0f64..50.0, 2..30),
            b in proptest::collection::vec(-50.0f64..50.0, 2..30),
        ) {
            let t = t_test_independent(&a, &b).unwrap();
            let f = anova_oneway(&[a.clone(), b.clone()]).unwrap();
            prop_assume!(t.degenerate == DegenerateFlag::None);
            let t2 = t.statistic * t.statistic;
            prop_assert!((f.statistic - t2).abs() <= 1e-10 * t2.max(1e-12) + 1e-12);
            prop_assert!((0.0..=1.0).contains(&t.p));
        }

        #[test]
        fn chi_square_transpose_invariant(
            cells in proptest::collection::vec(1u64..200, 6)
        ) {
            let table = vec![cells[0..3].to_vec(), cells[3..6].to_vec()];
            let transposed: Vec<Vec<u64>> = (0..3).map(|j| vec![table[0][j], table[1][j]]).collect();
            let a = chi_square_contingency(&table).unwrap();
            let b = chi_square_contingency(&transposed).unwrap();
            prop_assert!((a.statistic - b.statistic).abs() < 1e-9 * a.statistic.max(1.0));
            prop_assert!((a.p - b.p).abs() < 1e-12);
        }

        #[test]
        fn binomial_mode_has_largest_p(n in 1u64..60, p0 in 0.05f64..0.95) {
            // round(n·p0) is not always the mode (n=5, p0=0.3); floor((n+1)p0) is.
            let mode = (((n + 1) as f64 * p0).floor() as u64).min(n);
            let pm = binomial_test(mode, n, p0).unwrap().p;
            for k in 0..=n {
                let pk = binomial_test(k, n, p0).unwrap().p;
                prop_assert!(pk <= pm + 1e-12, "k={} pk={} mode={} pm={}", k, pk, mode, pm);
            }
        }

        #[test]
        fn mann_whitney_matches_pair_count(
            a in proptest::collection::vec(0u8..8, 2..12),
            b in proptest::collection::vec(0u8..8, 2..12),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let out = mann_whitney_u(&a, &b).unwrap();
            prop_assert!((out.statistic - brute_u(&a, &b)).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&out.p));
        }
    }
}
