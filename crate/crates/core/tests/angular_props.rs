use std::collections::HashMap;

use num_complex::Complex64;
use proptest::prelude::*;
use qreadout::angular::{clebsch_gordan, to_spherical, wigner3j, wigner6j, HalfInt};

fn h(twice: i32) -> HalfInt {
    HalfInt::from_twice(twice)
}

/// Coupled states |J M> in the product basis |m1 m2>, built with the lowering
/// operator and Gram-Schmidt. Independent of any closed-form symbol.
fn coupled_states(tj1: i32, tj2: i32) -> HashMap<(i32, i32), HashMap<(i32, i32), f64>> {
    let lower = |state: &HashMap<(i32, i32), f64>| {
        // J- = j1- + j2-, with j-|j m> = sqrt(j(j+1) - m(m-1)) |j m-1>
        let c = |tj: i32, tm: i32| {
            let (j, m) = (tj as f64 / 2.0, tm as f64 / 2.0);
            (j * (j + 1.0) - m * (m - 1.0)).max(0.0).sqrt()
        };
        let mut out: HashMap<(i32, i32), f64> = HashMap::new();
        for (&(m1, m2), &a) in state {
            if m1 > -tj1 {
                *out.entry((m1 - 2, m2)).or_default() += a * c(tj1, m1);
            }
            if m2 > -tj2 {
                *out.entry((m1, m2 - 2)).or_default() += a * c(tj2, m2);
            }
        }
        let n = out.values().map(|v| v * v).sum::<f64>().sqrt();
        out.values_mut().for_each(|v| *v /= n);
        out
    };
    let mut states: HashMap<(i32, i32), HashMap<(i32, i32), f64>> = HashMap::new();
    let mut tj = tj1 + tj2;
    while tj >= (tj1 - tj2).abs() {
        // highest-weight state of J: orthogonal to all higher J at M = J
        let tm = tj;
        let pairs: Vec<(i32, i32)> = (-tj1..=tj1)
            .step_by(2)
            .flat_map(|m1| (-tj2..=tj2).step_by(2).map(move |m2| (m1, m2)))
            .filter(|&(m1, m2)| m1 + m2 == tm)
            .collect();
        let others: Vec<&HashMap<(i32, i32), f64>> =
            states.iter().filter(|((_, m), _)| *m == tm).map(|(_, s)| s).collect();
        // Gram-Schmidt starting from the basis vector with the largest m1
        let mut best = None;
        for &seed in pairs.iter().rev() {
            let mut v: HashMap<(i32, i32), f64> =
                pairs.iter().map(|&p| (p, if p == seed { 1.0 } else { 0.0 })).collect();
            for o in &others {
                let dot: f64 = o.iter().map(|(k, a)| a * v.get(k).copied().unwrap_or(0.0)).sum();
                for (k, a) in o.iter() {
                    *v.entry(*k).or_default() -= dot * a;
                }
            }
            let n = v.values().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-8 {
                v.values_mut().for_each(|x| *x /= n);
                best = Some(v);
                break;
            }
        }
        let mut v = best.expect("highest weight state");
        // Condon-Shortley: <j1 j1; j2 J-j1|J J> > 0
        let lead = v.get(&(tj1, tm - tj1)).copied().unwrap_or(0.0);
        if lead < 0.0 {
            v.values_mut().for_each(|x| *x = -*x);
        }
        let mut m = tm;
        states.insert((tj, m), v.clone());
        while m > -tj {
            v = lower(&v);
            m -= 2;
            states.insert((tj, m), v.clone());
        }
        tj -= 2;
    }
    states
}

#[test]
fn cg_matches_lowering_operator_construction() {
    for (tj1, tj2) in [(2, 2), (4, 2), (3, 2), (7, 4), (8, 2), (12, 4)] {
        let states = coupled_states(tj1, tj2);
        for (&(tj, tm), v) in &states {
            for (&(m1, m2), &a) in v {
                let cg = clebsch_gordan(h(tj1), h(m1), h(tj2), h(m2), h(tj), h(tm));
                assert!((cg - a).abs() < 1e-10, "j1={tj1}/2 j2={tj2}/2 J={tj}/2 M={tm}/2: {cg} vs {a}");
            }
        }
    }
}

#[test]
fn wigner3j_222_from_recursion_oracle() {
    // (j1 j2 J; m1 m2 -M) = (-1)^(j1-j2+M) <j1 m1 j2 m2|J M>/sqrt(2J+1)
    let states = coupled_states(4, 4);
    let cg = states[&(4, 0)][&(2, -2)];
    let oracle = cg / 5f64.sqrt();
    let w = wigner3j(h(4), h(4), h(4), h(2), h(-2), h(0));
    assert!((w - oracle).abs() < 1e-12, "{w} vs {oracle}");
    assert!((w - 1.0 / 70f64.sqrt()).abs() < 1e-12);
}

fn triad(max_twice: i32) -> impl Strategy<Value = (i32, i32, i32)> {
    (0..=max_twice, 0..=max_twice).prop_flat_map(move |(a, b)| {
        let lo = (a - b).abs();
        let hi = a + b;
        (Just(a), Just(b), (0..=((hi - lo) / 2)).prop_map(move |k| lo + 2 * k))
    })
}

fn three_j_input() -> impl Strategy<Value = [i32; 6]> {
    triad(12).prop_flat_map(|(a, b, c)| {
        (0..=a, 0..=b).prop_map(move |(ka, kb)| {
            let m1 = 2 * ka - a;
            let m2 = 2 * kb - b;
            [a, b, c, m1, m2, -m1 - m2]
        })
    })
}

fn w3(v: [i32; 6]) -> f64 {
    wigner3j(h(v[0]), h(v[1]), h(v[2]), h(v[3]), h(v[4]), h(v[5]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1500))]

    #[test]
    fn three_j_permutation_symmetry(v in three_j_input()) {
        let [a, b, c, m1, m2, m3] = v;
        let base = w3(v);
        let odd = h(a + b + c).phase();
        // even permutations
        prop_assert!((w3([b, c, a, m2, m3, m1]) - base).abs() < 1e-12);
        prop_assert!((w3([c, a, b, m3, m1, m2]) - base).abs() < 1e-12);
        // odd permutations and m -> -m
        prop_assert!((w3([b, a, c, m2, m1, m3]) - odd * base).abs() < 1e-12);
        prop_assert!((w3([a, c, b, m1, m3, m2]) - odd * base).abs() < 1e-12);
        prop_assert!((w3([a, b, c, -m1, -m2, -m3]) - odd * base).abs() < 1e-12);
    }

    #[test]
    fn cg_orthogonality((a, b) in (0..=10i32, 0..=10i32), pick in any::<prop::sample::Index>()) {
        let (ja, jb) = (h(a), h(b));
        let js: Vec<HalfInt> = HalfInt::coupled_range(ja, jb).collect();
        let j = js[pick.index(js.len())];
        for jp in &js {
            for m in j.projections() {
                for mp in jp.projections() {
                    let mut sum = 0.0;
                    for m1 in ja.projections() {
                        for m2 in jb.projections() {
                            sum += clebsch_gordan(ja, m1, jb, m2, j, m) * clebsch_gordan(ja, m1, jb, m2, *jp, mp);
                        }
                    }
                    let expect = if j == *jp && m == mp { 1.0 } else { 0.0 };
                    prop_assert!((sum - expect).abs() < 1e-12, "J={} J'={} M={} M'={}: {}", j, jp, m, mp, sum);
                }
            }
        }
    }

    #[test]
    fn six_j_orthogonality((a, b) in (0..=8i32, 0..=8i32), picks in (any::<prop::sample::Index>(), any::<prop::sample::Index>())) {
        // sum_x (2x+1)(2f+1) {a b x; a b f}{a b x; a b f'} = delta_ff'
        let (ja, jb) = (h(a), h(b));
        let fs: Vec<HalfInt> = HalfInt::coupled_range(ja, jb).collect();
        let f = fs[picks.0.index(fs.len())];
        let fp = fs[picks.1.index(fs.len())];
        let sum: f64 = HalfInt::coupled_range(ja, jb)
            .map(|x| {
                x.multiplicity() as f64
                    * f.multiplicity() as f64
                    * wigner6j(ja, jb, x, ja, jb, f)
                    * wigner6j(ja, jb, x, ja, jb, fp)
            })
            .sum();
        let expect = if f == fp { 1.0 } else { 0.0 };
        prop_assert!((sum - expect).abs() < 1e-12, "{}", sum);
    }

    #[test]
    fn six_j_symmetries(t1 in triad(8), t2 in (0..=8i32, 0..=8i32, 0..=8i32)) {
        let (a, b, c) = t1;
        let (d, e, f) = t2;
        let s = |v: [i32; 6]| wigner6j(h(v[0]), h(v[1]), h(v[2]), h(v[3]), h(v[4]), h(v[5]));
        let base = s([a, b, c, d, e, f]);
        // column permutations
        prop_assert!((s([b, a, c, e, d, f]) - base).abs() < 1e-12);
        prop_assert!((s([a, c, b, d, f, e]) - base).abs() < 1e-12);
        prop_assert!((s([c, b, a, f, e, d]) - base).abs() < 1e-12);
        // upper/lower exchange in two columns
        prop_assert!((s([d, e, c, a, b, f]) - base).abs() < 1e-12);
        prop_assert!((s([a, e, f, d, b, c]) - base).abs() < 1e-12);
        // Regge: {a b c; d e f} = {a (b+c+e-f)/2 (b+c-e+f)/2; d (e+f+b-c)/2 (e+f-b+c)/2}
        let p = b + c + e - f;
        let q = b + c - e + f;
        let r = e + f + b - c;
        let u = e + f - b + c;
        if p % 2 == 0 && q % 2 == 0 && r % 2 == 0 && u % 2 == 0 && p >= 0 && q >= 0 && r >= 0 && u >= 0 {
            prop_assert!((s([a, p / 2, q / 2, d, r / 2, u / 2]) - base).abs() < 1e-12);
        }
    }

    #[test]
    fn spherical_round_trip(re in prop::array::uniform3(-1.0f64..1.0), im in prop::array::uniform3(-1.0f64..1.0)) {
        let v: [Complex64; 3] = std::array::from_fn(|k| Complex64::new(re[k], im[k]));
        let norm: f64 = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        prop_assume!(norm > 1e-3);
        let unit = v.map(|c| c / norm);
        let s = to_spherical(unit);
        prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
        let back = s.to_cartesian();
        for k in 0..3 {
            prop_assert!((back[k] - unit[k]).norm() < 1e-12);
        }
    }
}
