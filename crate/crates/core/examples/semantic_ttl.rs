//! Prints the semantic TTL verdict for every context and time case.
//!
//! cargo run --example semantic_ttl

use waan::domain::{ContextTag, SemanticTtl, ZoneId};
use waan::handover::{relevance, ttl_valid};

fn main() {
    let tag = ContextTag {
        zone: ZoneId(1),
        intent_version: 0,
    };
    for threshold in [0.5, 0.6] {
        let ttl = SemanticTtl {
            created_at: 1000,
            time_budget: 5000,
            context_tag: tag,
            relevance_threshold: threshold,
        };
        println!("threshold {threshold}, budget 5000 ms from t = 1000");
        for (zone, version) in [(1, 0), (2, 0), (1, 1), (2, 1)] {
            let now = ContextTag {
                zone: ZoneId(zone),
                intent_version: version,
            };
            for t in [3000, 6000, 6001] {
                println!(
                    "  zone {zone} version {version} t {t}: relevance {:.1} -> {}",
                    relevance(&tag, &now),
                    if ttl_valid(&ttl, t, &now) {
                        "valid"
                    } else {
                        "stale"
                    }
                );
            }
        }
    }
}
