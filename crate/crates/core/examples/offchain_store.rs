//! Content-addressed blob store: uploads are keyed by their SHA-256, reads
//! re-hash, quota and corruption are reported as typed errors.
//!
//! Run with `cargo run --example offchain_store`.

use mdm_core::crypto::sha256;
use mdm_core::registry::upload_ref;
use mdm_core::store::{BlobStore, MediaKind, StoreError};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let store = BlobStore::with_quota(dir.path(), Some(1024))?;

    let song = b"la la la, a short demo track".to_vec();
    let hash = store.put(&song, MediaKind::MultimediaSource)?;
    assert_eq!(hash, sha256(&song));
    println!("stored {} bytes as {}", song.len(), upload_ref(&hash));
    println!("on disk at {}", store.path_of(&hash).display());
    println!("kind: {}", store.kind(&hash)?.label());

    let again = store.put(&song, MediaKind::MultimediaSource)?;
    println!("uploading the same bytes again yields the same key: {}", again == hash);

    match store.put(&vec![0u8; 4096], MediaKind::MultimediaSource) {
        Err(StoreError::StorageFull { needed, available }) => {
            println!("quota: needed {needed} bytes, {available} available")
        }
        other => println!("unexpected: {other:?}"),
    }

    let mut bytes = std::fs::read(store.path_of(&hash))?;
    bytes[0] ^= 0xff;
    std::fs::write(store.path_of(&hash), bytes)?;
    println!("after flipping a byte, verified read -> {:?}", store.get_verified(&hash)?.map(|b| b.len()));

    store.delete(&hash)?;
    println!("after delete, contains = {}", store.contains(&hash));
    Ok(())
}
