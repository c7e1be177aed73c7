//! Device identity generation. A reset rotates the advertising id only;
//! hardware-bound identifiers survive, as on a real device.

use gauntlet_core::digest::sha256_hex;
use gauntlet_core::profile::{luhn_check_digit, DeviceProfile, GeoPoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct ProfileGenerator {
    seed: u64,
    resets: u64,
}

/// Stable 64-bit seed for a device label.
pub fn seed_for(label: &str) -> u64 {
    u64::from_str_radix(&sha256_hex(label.as_bytes())[..16], 16).unwrap_or(0)
}

fn mac(rng: &mut ChaCha8Rng) -> String {
    let mut b: [u8; 6] = rng.random();
    // locally administered, unicast
    b[0] = (b[0] | 0x02) & 0xfe;
    b.iter()
        .map(|x| format!("{x:02x}"))
        .collect::<Vec<_>>()
        .join(":")
}

impl ProfileGenerator {
    pub fn new(seed: u64) -> Self {
        ProfileGenerator { seed, resets: 0 }
    }

    pub fn resets(&self) -> u64 {
        self.resets
    }

    /// Performs a profile reset and returns the new ground truth.
    pub fn reset(&mut self) -> DeviceProfile {
        self.resets += 1;
        let mut hw = ChaCha8Rng::seed_from_u64(self.seed);
        let android_id = format!("{:016x}", hw.random::<u64>());
        let payload: String = std::iter::once("35".to_string())
            .chain((0..12).map(|_| hw.random_range(0..10u8).to_string()))
            .collect();
        let imei = format!("{payload}{}", luhn_check_digit(&payload));
        let mac_device = mac(&mut hw);
        let mac_wifi = mac(&mut hw);
        let geolocation = GeoPoint {
            lat: 40.0 + hw.random_range(0..10_000) as f64 / 10_000.0,
            lon: -74.0 + hw.random_range(0..10_000) as f64 / 10_000.0,
        };

        let mut soft = ChaCha8Rng::seed_from_u64(self.seed);
        soft.set_stream(self.resets);
        let adid = uuid::Builder::from_random_bytes(soft.random())
            .into_uuid()
            .to_string();

        DeviceProfile {
            adid,
            android_id,
            imei,
            mac_device,
            mac_wifi,
            geolocation,
            installed_apps: vec![
                "com.example.bank".into(),
                "com.example.messenger".into(),
                "com.example.fitness".into(),
            ],
        }
    }
}
