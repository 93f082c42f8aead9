//! Reference computations for the kernel corpus, written directly in Rust
//! from each kernel's description rather than derived from its RC source.

#![allow(dead_code)]

use std::fmt::Write as _;

use rolex_core::vm::value::Val;

fn tag(out: &str, name: &str) -> Option<f64> {
    out.lines().find_map(|l| l.strip_prefix(name)?.trim().parse().ok())
}

pub fn randomaccess(updates: usize) -> String {
    let mut table: Vec<u32> = (0..2048).collect();
    let mut hits = [0u32; 256];
    let mut ran: u32 = 1;
    for _ in 0..updates {
        ran = ran.wrapping_mul(1664525).wrapping_add(1013904223);
        let idx = ((ran >> 9) & 2047) as usize;
        table[idx] ^= ran;
        hits[idx >> 3] += 1;
    }
    let mut s = String::new();
    for row in table.chunks(8) {
        let row: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
    let _ = writeln!(s, "{}", hits.iter().sum::<u32>());
    s
}

pub fn render() -> String {
    let discs = [(8, 9, 6, 200), (22, 6, 5, 150), (15, 20, 8, 90), (26, 25, 4, 240)];
    let mut s = String::new();
    for y in 0..32i32 {
        let mut row = Vec::new();
        for x in 0..32i32 {
            let mut v = 2 * (x + y);
            for &(cx, cy, r, shade) in &discs {
                let (dx, dy) = (x - cx, y - cy);
                if dx * dx + dy * dy <= r * r {
                    v = shade - dx - dy;
                }
            }
            row.push(v.to_string());
            if row.len() == 8 {
                let _ = writeln!(s, "{}", row.join(" "));
                row.clear();
            }
        }
    }
    s
}

/// (initial energy, final energy) of the harmonic ring.
pub fn md(steps: usize) -> (f64, f64) {
    let n = 32;
    let dt = 0.05;
    let mut u = vec![0.0f64; n];
    let mut v = vec![0.0f64; n];
    u[0] = 1.0;
    u[1] = 0.5;
    u[n - 1] = 0.5;
    v[8] = 0.75;
    let energy = |u: &[f64], v: &[f64]| -> f64 {
        (0..n).map(|i| 0.5 * v[i] * v[i] + 0.5 * (u[(i + 1) % n] - u[i]).powi(2)).sum()
    };
    let forces = |u: &[f64]| -> Vec<f64> { (0..n).map(|i| u[(i + n - 1) % n] - 2.0 * u[i] + u[(i + 1) % n]).collect() };
    let e0 = energy(&u, &v);
    let mut a = forces(&u);
    for _ in 0..steps {
        for i in 0..n {
            v[i] += 0.5 * dt * a[i];
            u[i] += dt * v[i];
        }
        a = forces(&u);
        for i in 0..n {
            v[i] += 0.5 * dt * a[i];
        }
    }
    (e0, energy(&u, &v))
}

pub fn bfs(n: usize) -> String {
    let mut seed: u32 = 7;
    let mut next = || {
        seed = seed.wrapping_mul(1103515245).wrapping_add(12345);
        (seed >> 8) as usize % n
    };
    let mut adj = vec![Vec::new(); n];
    let mut pairs = Vec::new();
    for _ in 0..3 * n {
        let a = next();
        let b = next();
        pairs.push((a, b));
    }
    for &(a, b) in &pairs {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut level = vec![-1i64; n];
    let mut queue = std::collections::VecDeque::from([0usize]);
    level[0] = 0;
    let mut s = String::new();
    let mut visited = 1;
    while let Some(i) = queue.pop_front() {
        let _ = writeln!(s, "{i} {}", level[i]);
        for &w in &adj[i] {
            if level[w] < 0 {
                level[w] = level[i] + 1;
                queue.push_back(w);
                visited += 1;
            }
        }
    }
    let _ = writeln!(s, "visited {visited}");
    s
}

/// Operands of the matrix-multiply kernel, drawn in the kernel's order.
pub fn dgemm_operands(n: usize) -> (Vec<Vec<i32>>, Vec<Vec<i32>>) {
    let mut seed: u32 = 2024;
    let mut next = || {
        seed = seed.wrapping_mul(1103515245).wrapping_add(12345);
        ((seed >> 16) % 19) as i32 - 9
    };
    let mut a = vec![vec![0; n]; n];
    let mut b = vec![vec![0; n]; n];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = next();
            b[i][j] = next();
        }
    }
    (a, b)
}

pub fn matmul(a: &[Vec<i32>], b: &[Vec<i32>]) -> Vec<Vec<i32>> {
    let n = a.len();
    let mut c = vec![vec![0; n]; n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

pub fn dgemm(n: usize) -> String {
    let (a, b) = dgemm_operands(n);
    matmul(&a, &b).iter().flatten().map(|v| format!("{v}\n")).collect()
}

/// The SPD system both CG kernels solve.
pub fn cg_system(n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    if n == 2 {
        return (vec![vec![4.0, 1.0], vec![1.0, 3.0]], vec![1.0, 2.0]);
    }
    let mut seed: u32 = 99;
    let mut next = || {
        seed = seed.wrapping_mul(1103515245).wrapping_add(12345);
        ((seed >> 16) % 7) as i32 - 3
    };
    let mut a = vec![vec![0i32; n]; n];
    for i in 0..n {
        for j in 0..i {
            let v = next();
            a[i][j] = v;
            a[j][i] = v;
        }
    }
    for i in 0..n {
        a[i][i] = 4 + (0..n).filter(|&j| j != i).map(|j| a[i][j].abs()).sum::<i32>();
    }
    let b = (0..n).map(|i| (i % 5 + 1) as f64).collect();
    (a.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect(), b)
}

/// Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let piv = (k..n).max_by(|&x, &y| a[x][k].abs().total_cmp(&a[y][k].abs())).unwrap();
        a.swap(k, piv);
        b.swap(k, piv);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

/// Solution values printed after the residual line.
pub fn solution_lines(out: &str) -> Vec<f64> {
    let mut it = out.lines().skip_while(|l| !l.starts_with("residual"));
    it.next();
    it.filter_map(|l| l.trim().parse().ok()).collect()
}

pub fn declare(n: i32) -> String {
    let poly = |x: i32| ((3 * x + 5) * x - 7) % 1000;
    let digits = |x: i32| x.to_string().len() as i32;
    let mut s = 0;
    let mut out = String::new();
    for i in 0..n {
        s += poly(i) + digits(i * 37);
        if i % 100 == 99 {
            let _ = writeln!(out, "{i} {s}");
        }
    }
    let _ = writeln!(out, "sum {s}");
    out
}

fn int_input(inputs: &[Val], default: i32) -> i32 {
    match inputs.first() {
        Some(Val::I32(v)) => *v,
        _ => default,
    }
}

/// Check a fault-free output against the kernel's reference computation.
pub fn agrees(kernel: &str, inputs: &[Val], out: &str) -> Result<(), String> {
    let expect = |want: String| if out == want { Ok(()) } else { Err(format!("{kernel}: output differs from reference")) };
    match kernel {
        "randomaccess-lite" => expect(randomaccess(int_input(inputs, 4096) as usize)),
        "render-lite" => expect(render()),
        "bfs-robust" => expect(bfs(int_input(inputs, 256) as usize)),
        "dgemm-chk" => expect(dgemm(int_input(inputs, 16) as usize)),
        "declare-demo" => expect(declare(int_input(inputs, 800))),
        "md-lite" => {
            let (e0, e) = md(int_input(inputs, 100) as usize);
            let (g0, g) = (tag(out, "initial").ok_or("no initial line")?, tag(out, "energy").ok_or("no energy line")?);
            if (g0 - e0).abs() <= 1e-12 * e0.abs() && (g - e).abs() <= 1e-12 * e.abs() {
                Ok(())
            } else {
                Err(format!("md-lite: energies {g0} {g}, reference {e0} {e}"))
            }
        }
        "cg-ameliorate" | "sscg" => {
            let n = if kernel == "sscg" { 16 } else { int_input(inputs, 16) as usize };
            let (a, b) = cg_system(n);
            let x = solve(a, b);
            let got = solution_lines(out);
            let res = tag(out, "residual").ok_or("no residual line")?;
            if got.len() == n && res < 1e-6 && got.iter().zip(&x).all(|(g, w)| (g - w).abs() <= 1e-8) {
                Ok(())
            } else {
                Err(format!("{kernel}: solution {got:?}, reference {x:?}, residual {res}"))
            }
        }
        other => Err(format!("no reference for kernel '{other}'")),
    }
}
