use std::collections::BTreeMap;

use hmac::{Hmac, Mac};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use super::LedgerError;
use crate::constellation::SatId;

/// Produces and checks signatures over canonical message bytes.
pub trait Signer {
    fn sign(&self, sender: SatId, message: &[u8]) -> Result<Vec<u8>, LedgerError>;
    fn verify(&self, sender: SatId, message: &[u8], signature: &[u8]) -> Result<bool, LedgerError>;
}

/// Per-satellite secret keys issued by the data center at registration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KeyRegistry {
    #[serde(with = "hex_keys")]
    keys: BTreeMap<SatId, [u8; 32]>,
}

impl KeyRegistry {
    /// Registers `ids` with keys drawn from a seeded RNG.
    pub fn issue(ids: impl IntoIterator<Item = SatId>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keys = BTreeMap::new();
        for id in ids {
            let mut k = [0u8; 32];
            rng.fill_bytes(&mut k);
            keys.insert(id, k);
        }
        Self { keys }
    }

    pub fn contains(&self, id: SatId) -> bool {
        self.keys.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    fn key(&self, id: SatId) -> Result<&[u8; 32], LedgerError> {
        self.keys.get(&id).ok_or(LedgerError::UnknownAccount(id))
    }
}

/// Keyed-digest signatures (HMAC-SHA256) backed by a [`KeyRegistry`].
#[derive(Clone, Debug)]
pub struct HmacSigner<'a> {
    pub registry: &'a KeyRegistry,
}

impl Signer for HmacSigner<'_> {
    fn sign(&self, sender: SatId, message: &[u8]) -> Result<Vec<u8>, LedgerError> {
        let mut mac = Hmac::<Sha256>::new_from_slice(self.registry.key(sender)?).expect("any key length");
        mac.update(message);
        Ok(mac.finalize().into_bytes().to_vec())
    }

    fn verify(&self, sender: SatId, message: &[u8], signature: &[u8]) -> Result<bool, LedgerError> {
        let mut mac = Hmac::<Sha256>::new_from_slice(self.registry.key(sender)?).expect("any key length");
        mac.update(message);
        Ok(mac.verify_slice(signature).is_ok())
    }
}

mod hex_keys {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::constellation::SatId;

    pub fn serialize<S: Serializer>(keys: &BTreeMap<SatId, [u8; 32]>, s: S) -> Result<S::Ok, S::Error> {
        let m: BTreeMap<String, String> = keys.iter().map(|(id, k)| (id.to_string(), hex::encode(k))).collect();
        m.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<SatId, [u8; 32]>, D::Error> {
        let m = BTreeMap::<String, String>::deserialize(d)?;
        m.into_iter()
            .map(|(id, k)| {
                let id: SatId = id.parse().map_err(serde::de::Error::custom)?;
                let bytes = hex::decode(&k).map_err(serde::de::Error::custom)?;
                let key: [u8; 32] = bytes
                    .try_into()
                    .map_err(|_| serde::de::Error::custom("key must be 32 bytes"))?;
                Ok((id, key))
            })
            .collect()
    }
}
