//! Small fixed-size vector helpers and exact point/triangle queries.

use crate::Scalar;

pub type Point3<T> = [T; 3];

#[inline]
pub fn sub<T: Scalar>(a: Point3<T>, b: Point3<T>) -> Point3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add<T: Scalar>(a: Point3<T>, b: Point3<T>) -> Point3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale<T: Scalar>(a: Point3<T>, s: T) -> Point3<T> {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot<T: Scalar>(a: Point3<T>, b: Point3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross<T: Scalar>(a: Point3<T>, b: Point3<T>) -> Point3<T> {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[inline]
pub fn norm2<T: Scalar>(a: Point3<T>) -> T {
    dot(a, a)
}

#[inline]
pub fn norm<T: Scalar>(a: Point3<T>) -> T {
    norm2(a).sqrt()
}

#[inline]
pub fn dist2<T: Scalar>(a: Point3<T>, b: Point3<T>) -> T {
    norm2(sub(a, b))
}

#[inline]
pub fn dist<T: Scalar>(a: Point3<T>, b: Point3<T>) -> T {
    dist2(a, b).sqrt()
}

/// Closest point to `p` on triangle `(a, b, c)`, resolving the vertex, edge and face
/// Voronoi regions in turn.
pub fn closest_point_on_triangle<T: Scalar>(p: Point3<T>, a: Point3<T>, b: Point3<T>, c: Point3<T>) -> Point3<T> {
    let zero = T::zero();
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    if d1 <= zero && d2 <= zero {
        return a;
    }
    let bp = sub(p, b);
    let d3 = dot(ab, bp);
    let d4 = dot(ac, bp);
    if d3 >= zero && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= zero && d1 >= zero && d3 <= zero {
        let v = d1 / (d1 - d3);
        return add(a, scale(ab, v));
    }
    let cp = sub(p, c);
    let d5 = dot(ab, cp);
    let d6 = dot(ac, cp);
    if d6 >= zero && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= zero && d2 >= zero && d6 <= zero {
        let w = d2 / (d2 - d6);
        return add(a, scale(ac, w));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= zero && (d4 - d3) >= zero && (d5 - d6) >= zero {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return add(b, scale(sub(c, b), w));
    }
    let denom = T::one() / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    add(a, add(scale(ab, v), scale(ac, w)))
}

pub fn point_triangle_distance<T: Scalar>(p: Point3<T>, a: Point3<T>, b: Point3<T>, c: Point3<T>) -> T {
    dist(p, closest_point_on_triangle(p, a, b, c))
}
