//! Procedural test shapes, each centered and scaled to unit bbox diagonal.

use std::f64::consts::PI;

use nalgebra::Point3;

use crate::corruption::mesh::Mesh;
use crate::error::{Error, Result};

pub const BUILTIN: &[&str] = &[
    "sphere",
    "cube",
    "torus",
    "cylinder",
    "cone",
    "ellipsoid",
    "octahedron",
];

pub fn builtin(name: &str) -> Result<Mesh> {
    let mesh = match name {
        "sphere" => ellipsoid(1.0, 1.0, 1.0, 48, 96),
        "ellipsoid" => ellipsoid(1.0, 0.6, 0.4, 48, 96),
        "cube" => cube(),
        "torus" => torus(1.0, 0.35, 96, 48),
        "cylinder" => cylinder(0.5, 1.2, 96),
        "cone" => cone(0.6, 1.0, 96),
        "octahedron" => octahedron(),
        other => return Err(Error::Argument(format!("unknown builtin shape `{other}`"))),
    };
    mesh.normalized_to_unit_diagonal()
}

fn build(vertices: Vec<[f64; 3]>, triangles: Vec<[usize; 3]>) -> Mesh {
    Mesh::new(vertices.into_iter().map(Point3::from).collect(), triangles)
        .expect("valid procedural mesh")
}

fn ellipsoid(a: f64, b: f64, c: f64, rings: usize, segments: usize) -> Mesh {
    let mut v = vec![[0.0, 0.0, c]];
    for i in 1..rings {
        let theta = PI * i as f64 / rings as f64;
        for j in 0..segments {
            let phi = 2.0 * PI * j as f64 / segments as f64;
            v.push([
                a * theta.sin() * phi.cos(),
                b * theta.sin() * phi.sin(),
                c * theta.cos(),
            ]);
        }
    }
    v.push([0.0, 0.0, -c]);
    let south = v.len() - 1;
    let ring = |i: usize, j: usize| 1 + (i - 1) * segments + (j % segments);
    let mut t = Vec::new();
    for j in 0..segments {
        t.push([0, ring(1, j), ring(1, j + 1)]);
        t.push([south, ring(rings - 1, j + 1), ring(rings - 1, j)]);
    }
    for i in 1..rings - 1 {
        for j in 0..segments {
            t.push([ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)]);
            t.push([ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)]);
        }
    }
    build(v, t)
}

fn cube() -> Mesh {
    let mut v = Vec::new();
    for x in [-1.0, 1.0] {
        for y in [-1.0, 1.0] {
            for z in [-1.0, 1.0] {
                v.push([x, y, z]);
            }
        }
    }
    // vertex index = 4x + 2y + z with {0,1} digits
    let quads = [
        [0, 1, 3, 2],
        [4, 6, 7, 5],
        [0, 4, 5, 1],
        [2, 3, 7, 6],
        [0, 2, 6, 4],
        [1, 5, 7, 3],
    ];
    let mut t = Vec::new();
    for q in quads {
        t.push([q[0], q[1], q[2]]);
        t.push([q[0], q[2], q[3]]);
    }
    build(v, t)
}

fn torus(major: f64, minor: f64, nu: usize, nv: usize) -> Mesh {
    let mut v = Vec::new();
    for i in 0..nu {
        let u = 2.0 * PI * i as f64 / nu as f64;
        for j in 0..nv {
            let w = 2.0 * PI * j as f64 / nv as f64;
            let r = major + minor * w.cos();
            v.push([r * u.cos(), r * u.sin(), minor * w.sin()]);
        }
    }
    let id = |i: usize, j: usize| (i % nu) * nv + (j % nv);
    let mut t = Vec::new();
    for i in 0..nu {
        for j in 0..nv {
            t.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            t.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    build(v, t)
}

fn cylinder(radius: f64, height: f64, segments: usize) -> Mesh {
    let h = height / 2.0;
    let mut v = vec![[0.0, 0.0, h], [0.0, 0.0, -h]];
    for j in 0..segments {
        let phi = 2.0 * PI * j as f64 / segments as f64;
        v.push([radius * phi.cos(), radius * phi.sin(), h]);
        v.push([radius * phi.cos(), radius * phi.sin(), -h]);
    }
    let top = |j: usize| 2 + 2 * (j % segments);
    let bot = |j: usize| 3 + 2 * (j % segments);
    let mut t = Vec::new();
    for j in 0..segments {
        t.push([0, top(j), top(j + 1)]);
        t.push([1, bot(j + 1), bot(j)]);
        t.push([top(j), bot(j), bot(j + 1)]);
        t.push([top(j), bot(j + 1), top(j + 1)]);
    }
    build(v, t)
}

fn cone(radius: f64, height: f64, segments: usize) -> Mesh {
    let mut v = vec![[0.0, 0.0, height / 2.0], [0.0, 0.0, -height / 2.0]];
    for j in 0..segments {
        let phi = 2.0 * PI * j as f64 / segments as f64;
        v.push([radius * phi.cos(), radius * phi.sin(), -height / 2.0]);
    }
    let rim = |j: usize| 2 + (j % segments);
    let mut t = Vec::new();
    for j in 0..segments {
        t.push([0, rim(j), rim(j + 1)]);
        t.push([1, rim(j + 1), rim(j)]);
    }
    build(v, t)
}

fn octahedron() -> Mesh {
    let v = vec![
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
    ];
    let t = vec![
        [0, 2, 4],
        [2, 1, 4],
        [1, 3, 4],
        [3, 0, 4],
        [2, 0, 5],
        [1, 2, 5],
        [3, 1, 5],
        [0, 3, 5],
    ];
    build(v, t)
}
