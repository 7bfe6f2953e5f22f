//! Closed-form circle / rectangle intersections used to clip disks at window
//! boundaries without bias.

use alloc::vec::Vec;
use core::f64::consts::PI;
#[allow(unused_imports)]
use num_traits::Float;

use super::Rect;

/// Antiderivative of `sqrt(r^2 - x^2)`.
fn half_chord_primitive(x: f64, r: f64) -> f64 {
    let x = x.clamp(-r, r);
    let s = (r * r - x * x).max(0.0).sqrt();
    0.5 * (x * s + r * r * (x / r).clamp(-1.0, 1.0).asin())
}

/// Area of `{x^2 + y^2 <= r^2, x <= a, y <= b}`.
fn corner_area(a: f64, b: f64, r: f64) -> f64 {
    let hi = a.clamp(-r, r);
    if hi <= -r || b <= -r {
        return 0.0;
    }
    let full = |p: f64, q: f64| {
        if q > p {
            2.0 * (half_chord_primitive(q, r) - half_chord_primitive(p, r))
        } else {
            0.0
        }
    };
    let capped = |p: f64, q: f64| {
        if q > p {
            b * (q - p) + half_chord_primitive(q, r) - half_chord_primitive(p, r)
        } else {
            0.0
        }
    };
    if b >= r {
        return full(-r, hi);
    }
    let c = (r * r - b * b).max(0.0).sqrt();
    if b >= 0.0 {
        full(-r, hi.min(-c)) + capped(-c, hi.min(c)) + full(c, hi)
    } else {
        capped(-c, hi.min(c))
    }
}

/// Area of the disk `|x - center| <= r` inside `rect`.
pub fn disk_rect_area(center: [f64; 2], r: f64, rect: &Rect) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    let (a0, a1) = (rect.x0 - center[0], rect.x1 - center[0]);
    let (b0, b1) = (rect.y0 - center[1], rect.y1 - center[1]);
    let area = corner_area(a1, b1, r) - corner_area(a0, b1, r) - corner_area(a1, b0, r)
        + corner_area(a0, b0, r);
    area.clamp(0.0, PI * r * r)
}

/// Angular intervals `[t0, t1]` (radians, `0 <= t0 < t1 <= 2 pi`) of the circle
/// that lie inside the closed rectangle.
pub fn circle_rect_arcs(center: [f64; 2], r: f64, rect: &Rect) -> Vec<(f64, f64)> {
    let two_pi = 2.0 * PI;
    let mut cuts: Vec<f64> = alloc::vec![0.0, two_pi];
    let norm = |t: f64| {
        let t = t % two_pi;
        if t < 0.0 {
            t + two_pi
        } else {
            t
        }
    };
    for x in [rect.x0, rect.x1] {
        let c = (x - center[0]) / r;
        if c.abs() <= 1.0 {
            let t = c.acos();
            cuts.push(norm(t));
            cuts.push(norm(-t));
        }
    }
    for y in [rect.y0, rect.y1] {
        let s = (y - center[1]) / r;
        if s.abs() <= 1.0 {
            let t = s.asin();
            cuts.push(norm(t));
            cuts.push(norm(PI - t));
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    let mut arcs: Vec<(f64, f64)> = Vec::new();
    for w in cuts.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        if t1 - t0 <= 0.0 {
            continue;
        }
        let tm = 0.5 * (t0 + t1);
        let p = [center[0] + r * tm.cos(), center[1] + r * tm.sin()];
        if rect.contains_closed(p) {
            match arcs.last_mut() {
                Some(last) if last.1 == t0 => last.1 = t1,
                _ => arcs.push((t0, t1)),
            }
        }
    }
    arcs
}

/// Length of the circle inside the closed rectangle.
pub fn circle_rect_arc_length(center: [f64; 2], r: f64, rect: &Rect) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    circle_rect_arcs(center, r, rect)
        .iter()
        .map(|(a, b)| (b - a) * r)
        .sum()
}

/// Euclidean distance from a point to a closed rectangle (zero inside).
pub fn point_rect_distance(p: [f64; 2], rect: &Rect) -> f64 {
    let dx = (rect.x0 - p[0]).max(0.0).max(p[0] - rect.x1);
    let dy = (rect.y0 - p[1]).max(0.0).max(p[1] - rect.y1);
    (dx * dx + dy * dy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_area(c: [f64; 2], r: f64, rect: &Rect, n: usize) -> f64 {
        let h = 2.0 * r / n as f64;
        let mut count = 0usize;
        for i in 0..n {
            for j in 0..n {
                let x = c[0] - r + (i as f64 + 0.5) * h;
                let y = c[1] - r + (j as f64 + 0.5) * h;
                let inside = (x - c[0]).powi(2) + (y - c[1]).powi(2) <= r * r;
                if inside && rect.contains_closed([x, y]) {
                    count += 1;
                }
            }
        }
        count as f64 * h * h
    }

    #[test]
    fn full_and_empty_disks() {
        let rect = Rect::new(0.0, 0.0, 10.0, 10.0);
        assert!((disk_rect_area([5.0, 5.0], 1.0, &rect) - PI).abs() < 1e-14);
        assert_eq!(disk_rect_area([20.0, 5.0], 1.0, &rect), 0.0);
        assert!((circle_rect_arc_length([5.0, 5.0], 1.0, &rect) - 2.0 * PI).abs() < 1e-14);
        assert_eq!(circle_rect_arc_length([20.0, 5.0], 1.0, &rect), 0.0);
    }

    #[test]
    fn half_and_quarter_disks() {
        let rect = Rect::new(0.0, 0.0, 10.0, 10.0);
        let r = 0.7;
        assert!((disk_rect_area([0.0, 5.0], r, &rect) - 0.5 * PI * r * r).abs() < 1e-14);
        assert!((disk_rect_area([0.0, 0.0], r, &rect) - 0.25 * PI * r * r).abs() < 1e-14);
        assert!((circle_rect_arc_length([0.0, 5.0], r, &rect) - PI * r).abs() < 1e-13);
        assert!((circle_rect_arc_length([10.0, 10.0], r, &rect) - 0.5 * PI * r).abs() < 1e-13);
    }

    #[test]
    fn clipped_area_matches_brute_force() {
        let rect = Rect::new(0.0, 0.0, 1.0, 0.8);
        for &(c, r) in &[([0.1, 0.2], 0.3), ([0.95, 0.75], 0.2), ([0.5, -0.1], 0.25)] {
            let exact = disk_rect_area(c, r, &rect);
            let approx = brute_area(c, r, &rect, 2000);
            assert!((exact - approx).abs() < 2e-4 * PI * r * r, "{exact} vs {approx}");
        }
    }

    #[test]
    fn disk_covering_thin_rectangle() {
        let rect = Rect::new(-0.1, -0.05, 0.1, 0.05);
        assert!((disk_rect_area([0.0, 0.0], 1.0, &rect) - 0.02).abs() < 1e-15);
        assert_eq!(circle_rect_arc_length([0.0, 0.0], 1.0, &rect), 0.0);
    }
}
