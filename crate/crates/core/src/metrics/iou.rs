//! Rotated box overlap via convex polygon clipping.

use std::cmp::Ordering;

use crate::scene::Box3D;

type Pt = [f64; 2];

fn cross(o: Pt, a: Pt, b: Pt) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Shoelace area; positive for counter-clockwise polygons.
pub fn polygon_area(poly: &[Pt]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        acc += a[0] * b[1] - b[0] * a[1];
    }
    acc / 2.0
}

fn line_intersection(p: Pt, q: Pt, a: Pt, b: Pt) -> Pt {
    // Segment p->q against the infinite line a->b.
    let cp = cross(a, b, p);
    let cq = cross(a, b, q);
    let t = cp / (cp - cq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Sutherland-Hodgman clipping of `subject` by a convex counter-clockwise
/// `clip` polygon.
pub fn clip_convex(subject: &[Pt], clip: &[Pt]) -> Vec<Pt> {
    let mut output: Vec<Pt> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(a, b, cur) >= 0.0;
            let prev_in = cross(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(line_intersection(prev, cur, a, b));
            }
        }
    }
    output
}

fn canonical_order(a: &Box3D, b: &Box3D) -> Ordering {
    let ka = [a.x, a.y, a.l, a.w, a.yaw];
    let kb = [b.x, b.y, b.l, b.w, b.yaw];
    for (x, y) in ka.iter().zip(kb.iter()) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// Area of the BEV intersection of two rotated rectangles.
pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    // Clip in a fixed order so the result is exactly symmetric.
    let (a, b) = if canonical_order(a, b) == Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    };
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let reach = (a.l.hypot(a.w) + b.l.hypot(b.w)) / 2.0;
    if dx * dx + dy * dy > reach * reach {
        return 0.0;
    }
    // Work in a frame centered on `a` to limit cancellation.
    let shift = |bx: &Box3D| {
        let mut c = bx.bev_corners();
        for p in c.iter_mut() {
            p[0] -= a.x;
            p[1] -= a.y;
        }
        c
    };
    let pa = shift(a);
    let pb = shift(b);
    polygon_area(&clip_convex(&pa, &pb)).max(0.0)
}

/// BEV IoU of two yaw-rotated boxes; zero-area boxes give 0.
pub fn rotated_iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    let area_a = a.l * a.w;
    let area_b = b.l * b.w;
    if !(area_a > 0.0 && area_b > 0.0) {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Volumetric IoU: BEV intersection times vertical overlap over the union.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let vol_a = a.volume();
    let vol_b = b.volume();
    if !(vol_a > 0.0 && vol_b > 0.0) {
        return 0.0;
    }
    let z_lo = (a.z - a.h / 2.0).max(b.z - b.h / 2.0);
    let z_hi = (a.z + a.h / 2.0).min(b.z + b.h / 2.0);
    let dz = z_hi - z_lo;
    if dz <= 0.0 {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b) * dz;
    let union = vol_a + vol_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::ClassId;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn bx(x: f64, y: f64, l: f64, w: f64, yaw: f64) -> Box3D {
        Box3D::new(ClassId::Car, [x, y, 0.0], [l, w, 1.0], yaw).unwrap()
    }

    #[test]
    fn identical_and_disjoint() {
        let a = bx(1.0, 2.0, 4.0, 2.0, 0.7);
        assert!((rotated_iou_bev(&a, &a) - 1.0).abs() < 1e-12);
        assert_eq!(rotated_iou_bev(&a, &bx(101.0, 2.0, 4.0, 2.0, 0.7)), 0.0);
        assert!((iou_3d(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unit_squares_offset_half() {
        let a = bx(0.0, 0.0, 1.0, 1.0, 0.0);
        let b = bx(0.5, 0.0, 1.0, 1.0, 0.0);
        assert!((rotated_iou_bev(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rotated_square_closed_form() {
        // Concentric unit squares at 45 degrees overlap in a regular octagon
        // of area 2(sqrt2 - 1).
        let a = bx(0.0, 0.0, 1.0, 1.0, 0.0);
        let b = bx(0.0, 0.0, 1.0, 1.0, PI / 4.0);
        let inter = 2.0 * (2f64.sqrt() - 1.0);
        let expected = inter / (2.0 - inter);
        assert!((rotated_iou_bev(&a, &b) - expected).abs() < 1e-12);
    }

    #[test]
    fn vertical_overlap() {
        let a = Box3D::new(ClassId::Car, [0.0, 0.0, 1.0], [2.0, 1.0, 2.0], 0.0).unwrap();
        let b = Box3D::new(ClassId::Car, [0.0, 0.0, 2.0], [2.0, 1.0, 2.0], 0.0).unwrap();
        assert!((iou_3d(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        let c = Box3D::new(ClassId::Car, [0.0, 0.0, 5.0], [2.0, 1.0, 2.0], 0.0).unwrap();
        assert_eq!(iou_3d(&a, &c), 0.0);
    }

    fn arb_box() -> impl Strategy<Value = Box3D> {
        (-5.0..5.0f64, -5.0..5.0f64, 0.2..5.0f64, 0.2..5.0f64, -PI..PI)
            .prop_map(|(x, y, l, w, yaw)| bx(x, y, l, w, yaw))
    }

    proptest! {
        #[test]
        fn iou_is_symmetric(a in arb_box(), b in arb_box()) {
            let ab = rotated_iou_bev(&a, &b);
            let ba = rotated_iou_bev(&b, &a);
            prop_assert!((ab - ba).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn iou_rigid_invariant(a in arb_box(), b in arb_box(),
                               tx in -20.0..20.0f64, ty in -20.0..20.0f64, rot in -PI..PI) {
            let (s, c) = rot.sin_cos();
            let move_box = |q: &Box3D| bx(c * q.x - s * q.y + tx, s * q.x + c * q.y + ty, q.l, q.w, q.yaw + rot);
            let before = rotated_iou_bev(&a, &b);
            let after = rotated_iou_bev(&move_box(&a), &move_box(&b));
            prop_assert!((before - after).abs() < 1e-9, "{} vs {}", before, after);
        }
    }
}
