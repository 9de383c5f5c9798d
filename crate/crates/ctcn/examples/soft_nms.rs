//! Soft-NMS versus hard suppression on a handful of overlapping
//! detections: overlapping neighbors are decayed by exp(-tIoU^2 / sigma)
//! instead of being removed outright.

use ctcn::eval::{soft_nms, Detection};
use ctcn::targets::Segment;

fn det(score: f64, start: f64, end: f64) -> Detection {
    Detection {
        video: "v".into(),
        label: 1,
        score,
        segment: Segment::new(start, end).unwrap(),
    }
}

fn main() {
    let dets = vec![
        det(0.95, 0.10, 0.30), // the winner
        det(0.80, 0.12, 0.32), // heavy overlap with the winner
        det(0.70, 0.25, 0.45), // partial overlap
        det(0.60, 0.60, 0.80), // disjoint, untouched
    ];
    println!("input:");
    for d in &dets {
        println!("  [{:.2}, {:.2}] score {:.3}", d.segment.start, d.segment.end, d.score);
    }

    for sigma in [0.5, 0.1] {
        let out = soft_nms(&dets, sigma, 1e-3).unwrap();
        println!("\nsoft-nms, sigma {sigma}:");
        for d in &out {
            println!("  [{:.2}, {:.2}] score {:.4}", d.segment.start, d.segment.end, d.score);
        }
    }

    // The two-detection closed form: the weaker one is decayed once by
    // exp(-tIoU^2 / sigma).
    let a = det(1.0, 0.0, 0.4);
    let b = det(0.8, 0.2, 0.6);
    let overlap = 0.2 / 0.6;
    let expected = 0.8 * (-(overlap * overlap) / 0.5f64).exp();
    let out = soft_nms(&[a, b], 0.5, 1e-3).unwrap();
    println!("\ntwo-detection check: got {:.6}, closed form {expected:.6}", out[1].score);
}
