//! Log-distance path loss: RSSI, SNR and transfer times over distance.
//!
//! cargo run --example path_loss

use waan::kernel::radio::{transfer_time, RadioModel};

fn main() {
    let radio = RadioModel {
        tx_power: 20.0,
        pathloss_exponent: 3.0,
        ref_distance: 1.0,
        ref_loss: 40.0,
        noise_floor: -95.0,
        connect_threshold_rssi: -85.0,
        base_link_latency: 5,
        shadowing_sigma: 4.0,
    };
    println!("link budget range {:.1} m", radio.link_budget_range(0.0));
    for offset in [-8.0, -4.0, 4.0, 8.0] {
        println!(
            "  with {offset:+} dB shadowing {:.1} m",
            radio.link_budget_range(offset)
        );
    }
    println!("distance  rssi dBm  snr dB  connected");
    for d in [1.0, 10.0, 50.0, 100.0, 146.0, 147.0, 200.0] {
        println!(
            "{d:>8.0}  {:>8.1}  {:>6.1}  {}",
            radio.rssi(d),
            radio.snr(d),
            radio.meets_threshold(d, 0.0)
        );
    }
    println!("bytes     1 Mbit/s  10 Mbit/s");
    for bytes in [64, 4264, 40_000, 1_000_000] {
        println!(
            "{bytes:>9}  {:>5} ms  {:>6} ms",
            transfer_time(bytes, 1e6, 2e6, &radio),
            transfer_time(bytes, 10e6, 10e6, &radio)
        );
    }
}
