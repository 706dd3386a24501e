use robust_lfd::band::{
    band_overlap_diagnostic, classify_regions, inner_lrf_distance, overlap_measure, random_member, scaled_gaussian,
    solve_band, solve_template, BandSolution, BandSpec, BandType, Rule,
};
use robust_lfd::convex::{
    maximize_affinity_at_u, sup_distance, ConvexProblem, DensityBox, Hypothesis, SolverOptions,
};
use robust_lfd::contamination::{solve_contamination, ContaminationSpec, Direction};
use robust_lfd::divergence::{u_affinity, UAffinityParam};
use robust_lfd::grid::{Grid, GridDensity};
use robust_lfd::LfdError;

/// Lower bounds `0.8 N(-+1, 4)`, upper bounds `(1 + eps_bar) N(-+1, upper_var)`.
fn gaussian_band(grid: Grid, eps_bar: f64, upper_var: f64) -> BandSpec {
    let lo = |m: f64| scaled_gaussian(&grid, 0.8, m, 4.0).unwrap();
    let up = |m: f64| scaled_gaussian(&grid, 1.0 + eps_bar, m, upper_var).unwrap();
    BandSpec::new(grid, lo(-1.0), up(-1.0), lo(1.0), up(1.0)).unwrap()
}

fn coarse() -> Grid {
    Grid::new(-12.0, 12.0, 401).unwrap()
}

fn nonempty(sol: &BandSolution) -> usize {
    sol.regions.iter().filter(|r| !r.intervals.is_empty()).count()
}

fn mass(grid: &Grid, v: &[f64]) -> f64 {
    grid.integrate(v).unwrap()
}

fn check_invariants(spec: &BandSpec, sol: &BandSolution) {
    let grid = spec.grid();
    let (g0, g1) = (sol.lfd0.values(), sol.lfd1.values());
    assert!((mass(grid, g0) - 1.0).abs() < 1e-6);
    assert!((mass(grid, g1) - 1.0).abs() < 1e-6);
    for i in 0..grid.len() {
        assert!(g0[i] >= spec.g0_lower()[i] - 1e-10 && g0[i] <= spec.g0_upper()[i] + 1e-10);
        assert!(g1[i] >= spec.g1_lower()[i] - 1e-10 && g1[i] <= spec.g1_upper()[i] + 1e-10);
    }
    // every index belongs to exactly one region
    let mut seen = vec![0usize; grid.len()];
    for region in &sol.regions {
        for &(a, b) in &region.intervals {
            assert!(a <= b);
            (a..=b).for_each(|i| seen[i] += 1);
        }
    }
    assert!(seen.iter().all(|&c| c == 1));

    let close = |a: f64, b: f64, tol: f64| (a - b).abs() <= tol * (1.0 + b.abs());
    for region in &sol.regions {
        for i in region.indices() {
            let lrf = g1[i] / g0[i];
            assert!(
                close(lrf, sol.robust_lrf[i], 1e-6),
                "ratio {lrf} vs rule value {} for {:?} at {i}",
                sol.robust_lrf[i],
                region.rule
            );
            let (l0, u0, l1, u1) = (
                spec.g0_lower()[i],
                spec.g0_upper()[i],
                spec.g1_lower()[i],
                spec.g1_upper()[i],
            );
            let pinned = |a: f64, b: f64| (a - b).abs() <= 1e-10;
            match region.rule {
                Rule::UpperOverLower => assert!(pinned(g1[i], u1) && pinned(g0[i], l0)),
                Rule::UpperOverUpper => assert!(pinned(g1[i], u1) && pinned(g0[i], u0)),
                Rule::LowerOverUpper => assert!(pinned(g1[i], l1) && pinned(g0[i], u0)),
                Rule::LowerOverLower => assert!(pinned(g1[i], l1) && pinned(g0[i], l0)),
                Rule::ConstK1 => assert!(close(lrf, sol.k1, 1e-6)),
                Rule::ConstK2 => assert!(close(lrf, sol.k2, 1e-6)),
                Rule::InteriorNumeric => assert!(close(lrf, sol.k1, 1e-6)),
            }
        }
    }
}

#[test]
fn gaussian_bands_move_from_a_to_b_to_c_to_clipped() {
    let grid = Grid::standard();
    let expected = [
        (0.2, BandType::A, Some(5)),
        (0.5, BandType::B, Some(3)),
        (1.5, BandType::C, Some(5)),
        (19.0, BandType::ClippedLimit, None),
    ];
    for (eps_bar, ty, regions) in expected {
        let spec = gaussian_band(grid, eps_bar, 4.0);
        let sol = solve_band(&spec).unwrap();
        assert_eq!(sol.band_type, ty, "eps_bar = {eps_bar}");
        if let Some(r) = regions {
            assert_eq!(nonempty(&sol), r, "eps_bar = {eps_bar}");
        }
        check_invariants(&spec, &sol);
    }
}

#[test]
fn region_lists_follow_the_templates() {
    let grid = Grid::standard();
    let rules = |eps: f64| -> Vec<Rule> {
        solve_band(&gaussian_band(grid, eps, 4.0))
            .unwrap()
            .regions
            .iter()
            .map(|r| r.rule)
            .collect()
    };
    use Rule::*;
    assert_eq!(rules(0.2), vec![UpperOverLower, ConstK2, UpperOverUpper, ConstK1, LowerOverUpper]);
    assert_eq!(rules(0.5), vec![UpperOverLower, InteriorNumeric, LowerOverUpper]);
    assert_eq!(rules(1.5), vec![UpperOverLower, ConstK1, LowerOverLower, ConstK2, LowerOverUpper]);
}

/// Mass of `clamp(c * num / k^p, lo, hi)` evaluated directly.
fn clamp_mass(grid: &Grid, x: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let v: Vec<f64> = (0..grid.len()).map(|i| x[i].max(lo[i]).min(hi[i])).collect();
    mass(grid, &v)
}

/// Locates the unit-mass crossing of `m(k)` on a log-spaced scan.
fn scan_crossing(m: impl Fn(f64) -> f64, lo: f64, hi: f64, steps: usize) -> (f64, f64) {
    let ratio = (hi / lo).powf(1.0 / steps as f64);
    let mut k = lo;
    let mut prev = m(k) - 1.0;
    for _ in 0..steps {
        let next_k = k * ratio;
        let next = m(next_k) - 1.0;
        if prev.signum() != next.signum() || next == 0.0 {
            return (k, next_k);
        }
        k = next_k;
        prev = next;
    }
    panic!("no crossing in [{lo}, {hi}]");
}

#[test]
fn template_constants_match_scan_oracle() {
    let grid = coarse();
    let steps = 200_000;
    for (eps, ty) in [(0.2, BandType::A), (1.5, BandType::C)] {
        let spec = gaussian_band(grid, eps, 4.0);
        let sol = solve_template(&spec, ty).unwrap();
        let (l0, u0, l1, u1) = (spec.g0_lower(), spec.g0_upper(), spec.g1_lower(), spec.g1_upper());
        let n = grid.len();
        let (num0, base1): (&[f64], &[f64]) = match ty {
            BandType::A => (u1, u0),
            _ => (l1, l0),
        };
        let m0 = |k: f64| {
            let x: Vec<f64> = (0..n).map(|i| num0[i] / k).collect();
            clamp_mass(&grid, &x, l0, u0)
        };
        let m1 = |k: f64| {
            let x: Vec<f64> = (0..n).map(|i| k * base1[i]).collect();
            clamp_mass(&grid, &x, l1, u1)
        };
        let (a, b) = scan_crossing(m0, 1e-3, 1e3, steps);
        assert!(sol.k2 >= a * (1.0 - 1e-12) && sol.k2 <= b * (1.0 + 1e-12), "{ty:?} k2");
        let (a, b) = scan_crossing(m1, 1e-3, 1e3, steps);
        assert!(sol.k1 >= a * (1.0 - 1e-12) && sol.k1 <= b * (1.0 + 1e-12), "{ty:?} k1");
    }
}

#[test]
fn analytic_templates_reject_the_wrong_ordering() {
    let grid = coarse();
    let mid = gaussian_band(grid, 0.5, 4.0);
    assert!(solve_template(&mid, BandType::A).is_err());
    assert!(solve_template(&mid, BandType::C).is_err());
    assert!(solve_template(&gaussian_band(grid, 0.2, 4.0), BandType::C).is_err());
    assert!(solve_template(&gaussian_band(grid, 1.5, 4.0), BandType::A).is_err());
}

#[test]
fn type_b_constant_matches_interior_equation_scan() {
    let grid = coarse();
    let spec = gaussian_band(grid, 0.5, 4.0);
    let sol = solve_band(&spec).unwrap();
    assert_eq!(sol.band_type, BandType::B);
    let n = grid.len();
    let w = grid.weights();
    let (l0, u0, l1, u1) = (spec.g0_lower(), spec.g0_upper(), spec.g1_lower(), spec.g1_upper());
    // k (1 - P0(k)) - (1 - P1(k)) with the outer regions pinned to the bounds
    let phi = |k: f64| {
        let (mut p0, mut p1) = (0.0, 0.0);
        for i in 0..n {
            if u1[i] <= k * l0[i] {
                p0 += w[i] * l0[i];
                p1 += w[i] * u1[i];
            } else if l1[i] >= k * u0[i] {
                p0 += w[i] * u0[i];
                p1 += w[i] * l1[i];
            }
        }
        k * (1.0 - p0) - (1.0 - p1) + 1.0
    };
    let (a, b) = scan_crossing(phi, 0.1, 10.0, 200_000);
    assert!(sol.k1 >= a * (1.0 - 1e-12) && sol.k1 <= b * (1.0 + 1e-12));
    assert_eq!(sol.k1, sol.k2);
    // symmetric bounds give a symmetric problem, hence k1 = 1
    assert!((sol.k1 - 1.0).abs() < 1e-9);
}

fn box_problem(spec: &BandSpec) -> ConvexProblem {
    ConvexProblem::new(*spec.grid(), vec![])
        .unwrap()
        .with_box(
            Hypothesis::H0,
            DensityBox { lower: spec.g0_lower().to_vec(), upper: spec.g0_upper().to_vec() },
        )
        .unwrap()
        .with_box(
            Hypothesis::H1,
            DensityBox { lower: spec.g1_lower().to_vec(), upper: spec.g1_upper().to_vec() },
        )
        .unwrap()
}

#[test]
fn analytic_lfds_agree_with_barrier_solver_for_several_u() {
    let grid = coarse();
    for eps in [0.2, 0.5, 1.5] {
        let spec = gaussian_band(grid, eps, 4.0);
        let sol = solve_band(&spec).unwrap();
        let problem = box_problem(&spec);
        for u in [0.25, 0.5, 0.75] {
            let num = maximize_affinity_at_u(&problem, u, &SolverOptions::default()).unwrap();
            let ours = u_affinity(&sol.lfd0, &sol.lfd1, UAffinityParam::new(u).unwrap()).unwrap();
            assert!(
                (num.objective - ours).abs() <= 1e-7 * ours,
                "eps {eps} u {u}: {} vs {ours}",
                num.objective
            );
            if sol.band_type != BandType::B {
                let d = sup_distance(num.lfd0.values(), sol.lfd0.values())
                    .max(sup_distance(num.lfd1.values(), sol.lfd1.values()));
                assert!(d <= 1e-4, "eps {eps} u {u}: sup distance {d}");
            }
        }
    }
}

#[test]
fn lfds_dominate_random_band_members() {
    let grid = coarse();
    for eps in [0.2, 0.5, 1.5] {
        let spec = gaussian_band(grid, eps, 4.0);
        let sol = solve_band(&spec).unwrap();
        for u in [0.25, 0.5, 0.75] {
            let p = UAffinityParam::new(u).unwrap();
            let best = u_affinity(&sol.lfd0, &sol.lfd1, p).unwrap();
            for s in 0..100u64 {
                let g0 = random_member(&spec, Hypothesis::H0, 2 * s).unwrap();
                let g1 = random_member(&spec, Hypothesis::H1, 2 * s + 1).unwrap();
                let a = u_affinity(&g0, &g1, p).unwrap();
                assert!(a <= best + 1e-12, "eps {eps} u {u} seed {s}: {a} > {best}");
            }
        }
    }
}

#[test]
fn random_members_lie_in_the_band() {
    let spec = gaussian_band(coarse(), 0.5, 9.0);
    for s in 0..20 {
        for h in [Hypothesis::H0, Hypothesis::H1] {
            let g = random_member(&spec, h, s).unwrap();
            let (lo, hi) = match h {
                Hypothesis::H0 => (spec.g0_lower(), spec.g0_upper()),
                Hypothesis::H1 => (spec.g1_lower(), spec.g1_upper()),
            };
            for i in 0..lo.len() {
                assert!(g.values()[i] >= lo[i] - 1e-12 && g.values()[i] <= hi[i] + 1e-12);
            }
        }
    }
}

/// Band with `g1_upper = 1.5 N(1, 9)` and the other bounds as in the Type B case.
fn wide_alternative_band(grid: Grid) -> BandSpec {
    let lo = |m: f64| scaled_gaussian(&grid, 0.8, m, 4.0).unwrap();
    BandSpec::new(
        grid,
        lo(-1.0),
        scaled_gaussian(&grid, 1.5, -1.0, 4.0).unwrap(),
        lo(1.0),
        scaled_gaussian(&grid, 1.5, 1.0, 9.0).unwrap(),
    )
    .unwrap()
}

#[test]
fn wider_alternative_upper_bound_gives_degenerate_type_b() {
    let spec = wide_alternative_band(Grid::standard());
    let sol = solve_band(&spec).unwrap();
    check_invariants(&spec, &sol);
    assert_eq!(sol.band_type, BandType::B);
    let first = &sol.regions[0];
    assert_eq!(first.rule, Rule::UpperOverLower);
    assert!(first.intervals.is_empty(), "{:?}", first.intervals);
    assert!(!sol.regions[1].intervals.is_empty() && !sol.regions[2].intervals.is_empty());
    // no longer symmetric: the constant moves away from one
    assert!((sol.k1 - 1.0).abs() > 0.05);
}

#[test]
fn degenerate_type_b_matches_barrier_solver() {
    let spec = wide_alternative_band(coarse());
    let sol = solve_band(&spec).unwrap();
    for u in [0.25, 0.5, 0.75] {
        let num = maximize_affinity_at_u(&box_problem(&spec), u, &SolverOptions::default()).unwrap();
        let ours = u_affinity(&sol.lfd0, &sol.lfd1, UAffinityParam::new(u).unwrap()).unwrap();
        assert!((num.objective - ours).abs() <= 1e-7 * ours, "u {u}: {} vs {ours}", num.objective);
    }
}

#[test]
fn slack_upper_bounds_reduce_to_lower_contamination() {
    // Upper bounds 1.5 N(-+1, 9) never bind, so the lower contamination
    // LFDs are feasible for the band and therefore least favorable for it.
    let grid = Grid::standard();
    let lo = |m: f64| scaled_gaussian(&grid, 0.8, m, 4.0).unwrap();
    let up = |m: f64| scaled_gaussian(&grid, 1.5, m, 9.0).unwrap();
    let spec = BandSpec::new(grid, lo(-1.0), up(-1.0), lo(1.0), up(1.0)).unwrap();
    let sol = solve_band(&spec).unwrap();
    let f0 = GridDensity::gaussian(grid, -1.0, 4.0).unwrap();
    let f1 = GridDensity::gaussian(grid, 1.0, 4.0).unwrap();
    let cont = solve_contamination(
        &ContaminationSpec::new(Direction::Lower, f0, f1, 0.2, 0.2).unwrap(),
    )
    .unwrap();
    assert_eq!(sol.band_type, BandType::ClippedLimit);
    assert!((sol.k1 - cont.t_l).abs() < 1e-9 && (sol.k2 - cont.t_u).abs() < 1e-9);
    assert!(sup_distance(sol.lfd0.values(), cont.lfd0.values()) < 1e-9);
    assert!(sup_distance(&sol.robust_lrf, &cont.robust_lrf) < 1e-8);
}

#[test]
fn very_wide_bands_approach_lower_contamination_clipping() {
    let grid = Grid::standard();
    let f0 = GridDensity::gaussian(grid, -1.0, 4.0).unwrap();
    let f1 = GridDensity::gaussian(grid, 1.0, 4.0).unwrap();
    let cont = solve_contamination(
        &ContaminationSpec::new(Direction::Lower, f0, f1, 0.2, 0.2).unwrap(),
    )
    .unwrap();
    let mut last = f64::INFINITY;
    for eps in [5.0, 10.0, 19.0, 50.0] {
        let sol = solve_band(&gaussian_band(grid, eps, 4.0)).unwrap();
        let d = inner_lrf_distance(&sol, &cont.robust_lrf);
        assert!(d <= last + 1e-12, "distance grew at eps {eps}: {d} > {last}");
        last = d;
        if eps == 19.0 {
            assert_eq!(sol.band_type, BandType::ClippedLimit);
            assert!(d <= 0.05, "distance {d}");
        }
    }
}

#[test]
fn equal_constants_select_three_region_template() {
    let spec = gaussian_band(coarse(), 0.5, 4.0);
    let regions = classify_regions(&spec, 1.0, 1.0);
    let rules: Vec<Rule> = regions.iter().map(|r| r.rule).collect();
    assert_eq!(rules, vec![Rule::UpperOverLower, Rule::InteriorNumeric, Rule::LowerOverUpper]);
}

#[test]
fn shifted_gaussian_bounds_give_single_interval_regions() {
    let grid = coarse();
    for eps in [0.2, 1.5] {
        let spec = gaussian_band(grid, eps, 4.0);
        let sol = solve_band(&spec).unwrap();
        let regions = classify_regions(&spec, sol.k1, sol.k2);
        assert_eq!(regions, sol.regions);
        for r in &regions {
            assert!(r.intervals.len() <= 1, "{:?}: {:?}", r.rule, r.intervals);
        }
        // regions follow the ratio from left to right
        let starts: Vec<usize> = regions.iter().filter_map(|r| r.intervals.first().map(|iv| iv.0)).collect();
        assert!(starts.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn overlap_diagnostic_flags_only_the_flat_type_b_segment() {
    let grid = Grid::standard();
    let a = solve_band(&gaussian_band(grid, 0.2, 4.0)).unwrap();
    assert_eq!(band_overlap_diagnostic(&a), 0.0);
    let b = solve_band(&gaussian_band(grid, 0.5, 4.0)).unwrap();
    let m = band_overlap_diagnostic(&b);
    assert!(m > 0.1, "overlap measure {m}");
    let mid = grid.len() / 2;
    assert!((b.robust_lrf[mid] - 1.0).abs() < 1e-6);

    let left = GridDensity::from_fn(grid, |x| if x < -1.0 { 1.0 } else { 0.0 }).unwrap();
    let right = GridDensity::from_fn(grid, |x| if x > 1.0 { 1.0 } else { 0.0 }).unwrap();
    assert_eq!(overlap_measure(&left, &right).unwrap(), 0.0);
}

#[test]
fn identical_bands_are_reported_as_overlapping() {
    let grid = coarse();
    let lo = scaled_gaussian(&grid, 0.8, 0.0, 4.0).unwrap();
    let hi = scaled_gaussian(&grid, 1.3, 0.0, 4.0).unwrap();
    let spec = BandSpec::new(grid, lo.clone(), hi.clone(), lo, hi).unwrap();
    assert!(matches!(solve_band(&spec), Err(LfdError::ClassOverlap(_))));
}

#[test]
fn band_spec_validates_bounds() {
    let grid = coarse();
    let g = |s: f64, v: f64| scaled_gaussian(&grid, s, 0.0, v).unwrap();
    // lower above upper
    assert!(BandSpec::new(grid, g(1.2, 4.0), g(0.8, 4.0), g(0.8, 4.0), g(1.2, 4.0)).is_err());
    // lower mass above one
    assert!(BandSpec::new(grid, g(1.1, 4.0), g(1.2, 4.0), g(0.8, 4.0), g(1.2, 4.0)).is_err());
    // upper mass below one
    assert!(BandSpec::new(grid, g(0.8, 4.0), g(0.9, 4.0), g(0.8, 4.0), g(1.2, 4.0)).is_err());
    // wrong length
    assert!(BandSpec::new(grid, vec![0.0; 3], g(1.2, 4.0), g(0.8, 4.0), g(1.2, 4.0)).is_err());
    // negative entries
    let mut neg = g(0.8, 4.0);
    neg[10] = -1e-3;
    assert!(BandSpec::new(grid, neg, g(1.2, 4.0), g(0.8, 4.0), g(1.2, 4.0)).is_err());
}

#[test]
fn swapping_hypotheses_inverts_the_lrf() {
    let grid = coarse();
    for eps in [0.2, 0.5, 1.5] {
        let spec = gaussian_band(grid, eps, 4.0);
        let sol = solve_band(&spec).unwrap();
        let swapped = BandSpec::new(
            grid,
            spec.g1_lower().to_vec(),
            spec.g1_upper().to_vec(),
            spec.g0_lower().to_vec(),
            spec.g0_upper().to_vec(),
        )
        .unwrap();
        let other = solve_band(&swapped).unwrap();
        assert_eq!(other.band_type, sol.band_type);
        for i in 0..grid.len() {
            let prod = sol.robust_lrf[i] * other.robust_lrf[i];
            assert!((prod - 1.0).abs() < 1e-6, "eps {eps} at {i}: {prod}");
        }
    }
}
