use std::io::{self, Write};

use super::SignTranscript;

/// Writes one line per Gaussian draw of every attempt, as space-separated
/// `key=value` fields.
///
/// Fields: `sig`, `attempt`, `accepted` (0/1), `poly` (1 for `y1`, 2 for
/// `y2`), `coeff`, `y`, `x`, `y_u`, `a`, `b`, `restarts` (rejections inside
/// the sampler before this draw) and `shares` (comma-separated, or `-`).
pub fn write_transcript<W: Write>(
    out: &mut W,
    sig_index: usize,
    t: &SignTranscript,
) -> io::Result<()> {
    for (ai, attempt) in t.attempts.iter().enumerate() {
        for (poly, ys, ws) in [(1, &attempt.y1, &attempt.w1), (2, &attempt.y2, &attempt.w2)] {
            for (coeff, (y, w)) in ys.iter().zip(ws.iter()).enumerate() {
                let shares = if w.shares.is_empty() {
                    "-".to_string()
                } else {
                    w.shares
                        .iter()
                        .map(u32::to_string)
                        .collect::<Vec<_>>()
                        .join(",")
                };
                writeln!(
                    out,
                    "sig={sig_index} attempt={ai} accepted={} poly={poly} coeff={coeff} y={y} x={} y_u={} a={} b={} restarts={} shares={shares}",
                    attempt.accepted as u8, w.x, w.y_u, w.a, attempt.b, w.restarts
                )?;
            }
        }
    }
    Ok(())
}
