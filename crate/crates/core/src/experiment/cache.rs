//! Content-addressed feature cache.
//!
//! A cache key hashes the extraction settings together with the exact
//! samples being analysed, so a noisy mixture and its clean original get
//! different entries and any settings change misses. Features are rounded
//! to `f32` whether they come from disk or from a fresh extraction, which
//! keeps cold and warm runs bit-identical.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use sha2::{Digest, Sha256};

use crate::audio::Utterance;
use crate::dsp::{FeatureSource, FrameConfig, MfccConfig, MfccExtractor};
use crate::error::{Error, Result};
use crate::features::{decode_features, encode_features, FeatureMatrix};

pub struct CachedSource<S = MfccExtractor> {
    inner: S,
    settings: [u8; 32],
    dir: Option<PathBuf>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

/// Hash of the settings that affect extracted features.
pub fn settings_digest(frame: &FrameConfig, mfcc: &MfccConfig) -> [u8; 32] {
    let text = serde_json::to_string(&(frame, mfcc)).expect("configs serialize");
    Sha256::digest(text.as_bytes()).into()
}

impl CachedSource<MfccExtractor> {
    pub fn mfcc(
        frame: &FrameConfig,
        mfcc: &MfccConfig,
        rate: u32,
        dir: Option<PathBuf>,
    ) -> Result<Self> {
        let inner = MfccExtractor::new(frame, mfcc, rate)?;
        Self::new(inner, settings_digest(frame, mfcc), dir)
    }
}

impl<S: FeatureSource> CachedSource<S> {
    /// `dir = None` keeps everything in memory and only applies rounding.
    pub fn new(inner: S, settings: [u8; 32], dir: Option<PathBuf>) -> Result<Self> {
        if let Some(d) = &dir {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        Ok(Self {
            inner,
            settings,
            dir,
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        })
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn key(&self, utt: &Utterance) -> String {
        let mut h = Sha256::new();
        h.update(self.settings);
        h.update(utt.sample_rate().to_le_bytes());
        h.update((utt.len() as u64).to_le_bytes());
        for s in utt.samples() {
            h.update(s.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn entry(dir: &Path, key: &str) -> PathBuf {
        dir.join(&key[..2]).join(format!("{key}.feat"))
    }
}

impl<S: FeatureSource> FeatureSource for CachedSource<S> {
    fn features(&self, utt: &Utterance) -> Result<FeatureMatrix> {
        let Some(dir) = &self.dir else {
            return Ok(self.inner.features(utt)?.to_f32_precision());
        };
        let key = self.key(utt);
        let path = Self::entry(dir, &key);
        if let Ok(bytes) = fs::read(&path) {
            // A corrupt entry is treated as a miss and rewritten.
            if let Ok(m) = decode_features(&bytes, utt.id(), &path) {
                self.hits.fetch_add(1, Ordering::Relaxed);
                return Ok(m);
            }
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let m = self.inner.features(utt)?.to_f32_precision();
        let parent = path.parent().expect("entry has a parent");
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        // Write-then-rename so an interrupted run never leaves a truncated
        // entry under the final name.
        let tmp = parent.join(format!("{key}.{}.tmp", std::process::id()));
        fs::write(&tmp, encode_features(&m)?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(m)
    }
}
