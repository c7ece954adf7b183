/// Natural coordinates of the Q4 corner nodes, counter-clockwise from the
/// bottom-left corner.
const XI: [f64; 4] = [-1.0, 1.0, 1.0, -1.0];
const ETA: [f64; 4] = [-1.0, -1.0, 1.0, 1.0];

pub type ElementMatrix = [[f64; 8]; 8];

/// Plane-stress Q4 stiffness for a `dx × dy` rectangle, unit modulus and
/// thickness.
///
/// This is the exact integral of `BᵀDB` over the rectangle, which is what
/// 2×2 Gauss quadrature yields for a bilinear element. Dof order is
/// `(u0, v0, u1, v1, u2, v2, u3, v3)`.
pub fn element_stiffness(nu: f64, dx: f64, dy: f64) -> ElementMatrix {
    let r = dy / dx;
    let c = 0.5 * (1.0 - nu);
    let scale = 1.0 / (1.0 - nu * nu);
    let mut k = [[0.0; 8]; 8];
    for i in 0..4 {
        for j in 0..4 {
            let ixx = r * XI[i] * XI[j] / 4.0 * (1.0 + ETA[i] * ETA[j] / 3.0);
            let iyy = (1.0 / r) * ETA[i] * ETA[j] / 4.0 * (1.0 + XI[i] * XI[j] / 3.0);
            let ixy = XI[i] * ETA[j] / 4.0;
            let iyx = ETA[i] * XI[j] / 4.0;
            k[2 * i][2 * j] = scale * (ixx + c * iyy);
            k[2 * i + 1][2 * j + 1] = scale * (iyy + c * ixx);
            k[2 * i][2 * j + 1] = scale * (nu * ixy + c * iyx);
            k[2 * i + 1][2 * j] = scale * (nu * iyx + c * ixy);
        }
    }
    k
}

/// Plane-stress constitutive matrix for unit modulus.
pub fn constitutive(nu: f64) -> [[f64; 3]; 3] {
    let s = 1.0 / (1.0 - nu * nu);
    [[s, s * nu, 0.0], [s * nu, s, 0.0], [0.0, 0.0, s * 0.5 * (1.0 - nu)]]
}

/// Strain-displacement matrix at the element centroid.
pub fn centroid_strain_matrix(dx: f64, dy: f64) -> [[f64; 8]; 3] {
    let mut b = [[0.0; 8]; 3];
    for a in 0..4 {
        let dndx = XI[a] / (2.0 * dx);
        let dndy = ETA[a] / (2.0 * dy);
        b[0][2 * a] = dndx;
        b[1][2 * a + 1] = dndy;
        b[2][2 * a] = dndy;
        b[2][2 * a + 1] = dndx;
    }
    b
}

/// `D·B` at the centroid for modulus `e0`: maps element dofs to `(σx, σy, τxy)`.
pub fn centroid_stress_matrix(nu: f64, e0: f64, dx: f64, dy: f64) -> [[f64; 8]; 3] {
    let d = constitutive(nu);
    let b = centroid_strain_matrix(dx, dy);
    let mut s = [[0.0; 8]; 3];
    for i in 0..3 {
        for j in 0..8 {
            s[i][j] = e0 * (0..3).map(|k| d[i][k] * b[k][j]).sum::<f64>();
        }
    }
    s
}

pub fn von_mises(stress: [f64; 3]) -> f64 {
    let [sx, sy, txy] = stress;
    (sx * sx + sy * sy - sx * sy + 3.0 * txy * txy).max(0.0).sqrt()
}

pub fn quadratic_form(k: &ElementMatrix, u: &[f64; 8]) -> f64 {
    let mut acc = 0.0;
    for i in 0..8 {
        let mut row = 0.0;
        for j in 0..8 {
            row += k[i][j] * u[j];
        }
        acc += u[i] * row;
    }
    acc
}

pub fn bilinear_form(k: &ElementMatrix, a: &[f64; 8], b: &[f64; 8]) -> f64 {
    let mut acc = 0.0;
    for i in 0..8 {
        for j in 0..8 {
            acc += a[i] * k[i][j] * b[j];
        }
    }
    acc
}
