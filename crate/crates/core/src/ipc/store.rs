//! Shared-memory content store.
//!
//! A store is one mapped region: a header, a fixed-size allocation table and
//! a data area. The table lives inside the mapping, so every process that
//! maps the same region sees the same handles. A process-shared spin lock in
//! the header serializes table updates; data bytes are never touched under
//! the lock.
//!
//! Handles are 64-bit, start at 1 and are never reused within a region.
//! Data offsets are 64-byte aligned so `f64` views are always aligned.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::ops::{Deref, DerefMut};
use std::path::{Path, PathBuf};
use std::ptr;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock, Weak};

use memmap2::MmapMut;

use crate::error::{HaloError, Result};

const STORE_MAGIC: u64 = u64::from_le_bytes(*b"HALOSTR1");
const ALIGN: u64 = 64;
const PAGE: usize = 4096;

pub const DEFAULT_CAPACITY: u64 = 1 << 30;
pub const DEFAULT_MAX_ENTRIES: usize = 1 << 14;

#[repr(C)]
struct Header {
    magic: AtomicU64,
    capacity: AtomicU64,
    max_entries: AtomicU64,
    data_offset: AtomicU64,
    lock: AtomicU32,
    _pad: u32,
    next_handle: AtomicU64,
    live: AtomicU64,
    used: AtomicU64,
    footprint: AtomicU64,
    bytes_put: AtomicU64,
    peak_used: AtomicU64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug)]
struct Entry {
    handle: u64,
    offset: u64,
    len: u64,
    refcount: u64,
}

const HEADER_BYTES: usize = 128;
const _: () = assert!(std::mem::size_of::<Header>() <= HEADER_BYTES);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreOptions {
    pub capacity: u64,
    pub max_entries: usize,
}

impl Default for StoreOptions {
    fn default() -> Self {
        StoreOptions {
            capacity: DEFAULT_CAPACITY,
            max_entries: DEFAULT_MAX_ENTRIES,
        }
    }
}

impl StoreOptions {
    /// Defaults, with capacity taken from `HALO_SHM_CAPACITY_BYTES` if set.
    pub fn from_env() -> StoreOptions {
        let mut o = StoreOptions::default();
        if let Some(c) = std::env::var("HALO_SHM_CAPACITY_BYTES")
            .ok()
            .and_then(|v| v.trim().parse::<u64>().ok())
        {
            o.capacity = c;
        }
        o
    }
}

/// Snapshot of allocator accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StoreStats {
    pub capacity: u64,
    /// Sum of requested lengths of live allocations.
    pub used_bytes: u64,
    /// Aligned footprint of live allocations.
    pub footprint: u64,
    pub live_handles: u64,
    /// Bytes copied in by `put` over the store's lifetime.
    pub bytes_put: u64,
    pub peak_used: u64,
}

pub struct ContentStore {
    _map: MmapMut,
    base: *mut u8,
    app_id: u64,
    path: Option<PathBuf>,
    owner: bool,
    capacity: u64,
    max_entries: usize,
    data_offset: usize,
}

// SAFETY: all shared mutable state in the mapping is either atomic or
// guarded by the in-region lock; data windows are handed out under the
// handle-ownership contract documented on the view types.
unsafe impl Send for ContentStore {}
unsafe impl Sync for ContentStore {}

impl std::fmt::Debug for ContentStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ContentStore")
            .field("app_id", &format_args!("{:#x}", self.app_id))
            .field("path", &self.path)
            .field("capacity", &self.capacity)
            .finish()
    }
}

fn registry() -> &'static Mutex<HashMap<u64, Weak<ContentStore>>> {
    static R: OnceLock<Mutex<HashMap<u64, Weak<ContentStore>>>> = OnceLock::new();
    R.get_or_init(Default::default)
}

/// Directory holding named regions: `HALO_SHM_DIR`, else `/dev/shm`, else the
/// system temp directory.
pub fn shm_dir() -> PathBuf {
    if let Ok(d) = std::env::var("HALO_SHM_DIR") {
        return PathBuf::from(d);
    }
    let shm = Path::new("/dev/shm");
    if shm.is_dir() {
        shm.to_path_buf()
    } else {
        std::env::temp_dir()
    }
}

/// Region naming convention: `halo.<app_id>` with the id in 16 hex digits.
pub fn region_name(app_id: u64) -> String {
    format!("halo.{app_id:016x}")
}

fn align_up(v: u64) -> u64 {
    v.div_ceil(ALIGN) * ALIGN
}

fn layout(opts: &StoreOptions) -> (usize, usize) {
    let table = HEADER_BYTES + opts.max_entries * std::mem::size_of::<Entry>();
    let data_offset = table.div_ceil(PAGE) * PAGE;
    (data_offset, data_offset + opts.capacity as usize)
}

impl ContentStore {
    /// Private anonymous region, visible to this process only.
    pub fn create_anonymous(app_id: u64, opts: StoreOptions) -> Result<Arc<ContentStore>> {
        let (data_offset, total) = layout(&opts);
        let map = MmapMut::map_anon(total)?;
        let store = ContentStore::init(map, app_id, None, opts, data_offset);
        Ok(store.register())
    }

    /// Named region under [`shm_dir`], attachable by other processes.
    pub fn create_named(app_id: u64, opts: StoreOptions) -> Result<Arc<ContentStore>> {
        ContentStore::create_named_in(&shm_dir(), app_id, opts)
    }

    pub fn create_named_in(dir: &Path, app_id: u64, opts: StoreOptions) -> Result<Arc<ContentStore>> {
        let (data_offset, total) = layout(&opts);
        let path = dir.join(region_name(app_id));
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(&path)?;
        file.set_len(total as u64)?;
        // SAFETY: the file was just created and sized by us; other mappings
        // follow the in-region locking protocol.
        let map = unsafe { MmapMut::map_mut(&file)? };
        let store = ContentStore::init(map, app_id, Some(path), opts, data_offset);
        Ok(store.register())
    }

    /// Attaches to the region of `app_id`: the in-process instance when one is
    /// live, otherwise the named region under [`shm_dir`].
    pub fn attach(app_id: u64) -> Result<Arc<ContentStore>> {
        if let Some(s) = registry()
            .lock()
            .unwrap()
            .get(&app_id)
            .and_then(Weak::upgrade)
        {
            return Ok(s);
        }
        ContentStore::open_named_in(&shm_dir(), app_id)
    }

    pub fn open_named_in(dir: &Path, app_id: u64) -> Result<Arc<ContentStore>> {
        let path = dir.join(region_name(app_id));
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .open(&path)
            .map_err(|e| {
                HaloError::NoResource(format!("cannot open region {}: {e}", path.display()))
            })?;
        // SAFETY: see `create_named_in`.
        let map = unsafe { MmapMut::map_mut(&file)? };
        if map.len() < HEADER_BYTES {
            return Err(HaloError::NoResource("region too small".into()));
        }
        let base = map.as_ptr() as *mut u8;
        // SAFETY: the mapping is at least HEADER_BYTES long and page aligned.
        let h = unsafe { &*(base as *const Header) };
        if h.magic.load(Ordering::Acquire) != STORE_MAGIC {
            return Err(HaloError::NoResource(format!(
                "{} is not an initialized content store",
                path.display()
            )));
        }
        let capacity = h.capacity.load(Ordering::Relaxed);
        let max_entries = h.max_entries.load(Ordering::Relaxed) as usize;
        let data_offset = h.data_offset.load(Ordering::Relaxed) as usize;
        if map.len() < data_offset + capacity as usize {
            return Err(HaloError::NoResource("region shorter than its header claims".into()));
        }
        Ok(Arc::new(ContentStore {
            _map: map,
            base,
            app_id,
            path: Some(path),
            owner: false,
            capacity,
            max_entries,
            data_offset,
        }))
    }

    fn init(
        mut map: MmapMut,
        app_id: u64,
        path: Option<PathBuf>,
        opts: StoreOptions,
        data_offset: usize,
    ) -> ContentStore {
        let base = map.as_mut_ptr();
        // SAFETY: fresh zeroed mapping, at least HEADER_BYTES long.
        let h = unsafe { &*(base as *const Header) };
        h.capacity.store(opts.capacity, Ordering::Relaxed);
        h.max_entries
            .store(opts.max_entries as u64, Ordering::Relaxed);
        h.data_offset.store(data_offset as u64, Ordering::Relaxed);
        h.next_handle.store(1, Ordering::Relaxed);
        h.magic.store(STORE_MAGIC, Ordering::Release);
        ContentStore {
            _map: map,
            base,
            app_id,
            owner: path.is_some(),
            path,
            capacity: opts.capacity,
            max_entries: opts.max_entries,
            data_offset,
        }
    }

    fn register(self) -> Arc<ContentStore> {
        let s = Arc::new(self);
        registry()
            .lock()
            .unwrap()
            .insert(s.app_id, Arc::downgrade(&s));
        s
    }

    pub fn app_id(&self) -> u64 {
        self.app_id
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    fn header(&self) -> &Header {
        // SAFETY: base points at a live mapping that starts with a Header.
        unsafe { &*(self.base as *const Header) }
    }

    fn lock(&self) -> Table<'_> {
        let lock = &self.header().lock;
        let mut spins = 0u32;
        while lock
            .compare_exchange_weak(0, 1, Ordering::Acquire, Ordering::Relaxed)
            .is_err()
        {
            spins += 1;
            if spins < 16 {
                std::hint::spin_loop();
            } else {
                std::thread::yield_now();
            }
        }
        Table { store: self }
    }

    /// Allocates `len` bytes and returns a nonzero handle with refcount 1.
    /// Contents are unspecified.
    pub fn alloc(&self, len: u64) -> Result<u64> {
        self.lock().insert(len)
    }

    /// Copies `bytes` into a new allocation.
    pub fn put(&self, bytes: &[u8]) -> Result<u64> {
        let h = self.alloc(bytes.len() as u64)?;
        let (offset, _) = self.lock().find(h).expect("fresh handle");
        // SAFETY: the allocation is ours alone until the handle is returned.
        unsafe {
            ptr::copy_nonoverlapping(bytes.as_ptr(), self.data_ptr(offset), bytes.len());
        }
        self.header()
            .bytes_put
            .fetch_add(bytes.len() as u64, Ordering::Relaxed);
        Ok(h)
    }

    fn data_ptr(&self, offset: u64) -> *mut u8 {
        // SAFETY: offsets handed out by the allocator lie inside the data area.
        unsafe { self.base.add(self.data_offset + offset as usize) }
    }

    /// Read-only view of an allocation. No bytes are copied.
    pub fn get(self: &Arc<Self>, handle: u64) -> Result<StoreSlice> {
        let (offset, len) = self.lock().find(handle).ok_or(HaloError::BadHandle(handle))?;
        Ok(StoreSlice {
            _store: Arc::clone(self),
            ptr: self.data_ptr(offset),
            len: len as usize,
        })
    }

    /// Writable view of an allocation.
    ///
    /// # Safety
    /// The caller must hold the only outstanding reference through which the
    /// allocation is read or written for the lifetime of the view.
    pub unsafe fn get_mut(self: &Arc<Self>, handle: u64) -> Result<StoreSliceMut> {
        let (offset, len) = self.lock().find(handle).ok_or(HaloError::BadHandle(handle))?;
        Ok(StoreSliceMut {
            _store: Arc::clone(self),
            ptr: self.data_ptr(offset),
            len: len as usize,
        })
    }

    pub fn len_of(&self, handle: u64) -> Result<u64> {
        self.lock()
            .find(handle)
            .map(|(_, l)| l)
            .ok_or(HaloError::BadHandle(handle))
    }

    pub fn contains(&self, handle: u64) -> bool {
        self.lock().find(handle).is_some()
    }

    pub fn retain(&self, handle: u64) -> Result<()> {
        self.lock().adjust(handle, 1).map(|_| ())
    }

    /// Drops one reference; the allocation is reclaimed when none remain.
    pub fn release(&self, handle: u64) -> Result<()> {
        self.lock().adjust(handle, -1).map(|_| ())
    }

    /// Releases every live allocation regardless of refcount. Returns the
    /// number of bytes that were still allocated.
    pub fn reclaim_all(&self) -> u64 {
        let t = self.lock();
        let h = self.header();
        let used = h.used.load(Ordering::Relaxed);
        h.live.store(0, Ordering::Relaxed);
        h.used.store(0, Ordering::Relaxed);
        h.footprint.store(0, Ordering::Relaxed);
        drop(t);
        used
    }

    pub fn stats(&self) -> StoreStats {
        let _t = self.lock();
        let h = self.header();
        StoreStats {
            capacity: self.capacity,
            used_bytes: h.used.load(Ordering::Relaxed),
            footprint: h.footprint.load(Ordering::Relaxed),
            live_handles: h.live.load(Ordering::Relaxed),
            bytes_put: h.bytes_put.load(Ordering::Relaxed),
            peak_used: h.peak_used.load(Ordering::Relaxed),
        }
    }
}

impl Drop for ContentStore {
    fn drop(&mut self) {
        let mut reg = registry().lock().unwrap();
        if let Some(w) = reg.get(&self.app_id) {
            if w.strong_count() == 0 {
                reg.remove(&self.app_id);
            }
        }
        drop(reg);
        if self.owner {
            if let Some(p) = &self.path {
                let _ = std::fs::remove_file(p);
            }
        }
    }
}

/// Exclusive access to the allocation table while the region lock is held.
struct Table<'a> {
    store: &'a ContentStore,
}

impl Table<'_> {
    fn entries_ptr(&self) -> *mut Entry {
        // SAFETY: the table immediately follows the header.
        unsafe { self.store.base.add(HEADER_BYTES) as *mut Entry }
    }

    fn entries(&self) -> &mut [Entry] {
        let live = self.store.header().live.load(Ordering::Relaxed) as usize;
        // SAFETY: the lock is held, and [0, live) is initialized table space.
        unsafe { std::slice::from_raw_parts_mut(self.entries_ptr(), live) }
    }

    fn find(&self, handle: u64) -> Option<(u64, u64)> {
        if handle == 0 {
            return None;
        }
        self.entries()
            .iter()
            .find(|e| e.handle == handle)
            .map(|e| (e.offset, e.len))
    }

    /// First-fit insert into the offset-sorted table.
    fn insert(&mut self, len: u64) -> Result<u64> {
        let h = self.store.header();
        let live = h.live.load(Ordering::Relaxed) as usize;
        if live >= self.store.max_entries {
            return Err(HaloError::NoResource(format!(
                "content store table full ({} entries)",
                self.store.max_entries
            )));
        }
        let need = align_up(len);
        let mut cursor = 0u64;
        let mut slot = live;
        for (i, e) in self.entries().iter().enumerate() {
            if e.offset >= cursor && e.offset - cursor >= need {
                slot = i;
                break;
            }
            cursor = cursor.max(align_up(e.offset + e.len));
        }
        if slot == live && cursor + need > self.store.capacity {
            return Err(HaloError::NoResource(format!(
                "content store exhausted: {len} bytes requested, capacity {}",
                self.store.capacity
            )));
        }
        let handle = h.next_handle.fetch_add(1, Ordering::Relaxed);
        let base = self.entries_ptr();
        // SAFETY: live < max_entries, so shifting [slot, live) right by one
        // stays inside the table.
        unsafe {
            ptr::copy(base.add(slot), base.add(slot + 1), live - slot);
            base.add(slot).write(Entry {
                handle,
                offset: cursor,
                len,
                refcount: 1,
            });
        }
        h.live.store(live as u64 + 1, Ordering::Relaxed);
        let used = h.used.load(Ordering::Relaxed) + len;
        h.used.store(used, Ordering::Relaxed);
        h.footprint.fetch_add(need, Ordering::Relaxed);
        if used > h.peak_used.load(Ordering::Relaxed) {
            h.peak_used.store(used, Ordering::Relaxed);
        }
        Ok(handle)
    }

    fn adjust(&mut self, handle: u64, delta: i64) -> Result<u64> {
        let entries = self.entries();
        let idx = entries
            .iter()
            .position(|e| e.handle == handle && handle != 0)
            .ok_or(HaloError::BadHandle(handle))?;
        let e = &mut entries[idx];
        if delta > 0 {
            e.refcount += delta as u64;
            return Ok(e.refcount);
        }
        e.refcount -= 1;
        if e.refcount > 0 {
            return Ok(e.refcount);
        }
        let (len, live) = (e.len, entries.len());
        let base = self.entries_ptr();
        // SAFETY: removing index idx from [0, live).
        unsafe { ptr::copy(base.add(idx + 1), base.add(idx), live - idx - 1) };
        let h = self.store.header();
        h.live.store(live as u64 - 1, Ordering::Relaxed);
        h.used.fetch_sub(len, Ordering::Relaxed);
        h.footprint.fetch_sub(align_up(len), Ordering::Relaxed);
        Ok(0)
    }
}

impl Drop for Table<'_> {
    fn drop(&mut self) {
        self.store.header().lock.store(0, Ordering::Release);
    }
}

/// Zero-copy read view into the content store.
///
/// The view keeps the mapping alive. It does not pin the allocation: holders
/// must own a reference to the handle for as long as they read.
pub struct StoreSlice {
    _store: Arc<ContentStore>,
    ptr: *const u8,
    len: usize,
}

// SAFETY: the view is a read-only window into a mapping kept alive by the Arc.
unsafe impl Send for StoreSlice {}
unsafe impl Sync for StoreSlice {}

impl Deref for StoreSlice {
    type Target = [u8];
    fn deref(&self) -> &[u8] {
        // SAFETY: ptr/len describe an allocation inside the live mapping.
        unsafe { std::slice::from_raw_parts(self.ptr, self.len) }
    }
}

impl StoreSlice {
    pub fn as_f64(&self) -> Result<&[f64]> {
        bytemuck::try_cast_slice(self).map_err(|e| HaloError::BadArgument(format!("f64 view: {e}")))
    }

    pub fn as_u64(&self) -> Result<&[u64]> {
        bytemuck::try_cast_slice(self).map_err(|e| HaloError::BadArgument(format!("u64 view: {e}")))
    }
}

/// Writable view; see [`ContentStore::get_mut`].
pub struct StoreSliceMut {
    _store: Arc<ContentStore>,
    ptr: *mut u8,
    len: usize,
}

// SAFETY: exclusivity is the caller's obligation under `get_mut`.
unsafe impl Send for StoreSliceMut {}
unsafe impl Sync for StoreSliceMut {}

impl Deref for StoreSliceMut {
    type Target = [u8];
    fn deref(&self) -> &[u8] {
        // SAFETY: as for StoreSlice.
        unsafe { std::slice::from_raw_parts(self.ptr, self.len) }
    }
}

impl DerefMut for StoreSliceMut {
    fn deref_mut(&mut self) -> &mut [u8] {
        // SAFETY: exclusive by the `get_mut` contract.
        unsafe { std::slice::from_raw_parts_mut(self.ptr, self.len) }
    }
}

impl StoreSliceMut {
    pub fn as_f64_mut(&mut self) -> Result<&mut [f64]> {
        bytemuck::try_cast_slice_mut(self)
            .map_err(|e| HaloError::BadArgument(format!("f64 view: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::StatusCode;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn small(capacity: u64) -> Arc<ContentStore> {
        ContentStore::create_anonymous(
            rand::random(),
            StoreOptions {
                capacity,
                max_entries: 1024,
            },
        )
        .unwrap()
    }

    #[test]
    fn zero_length_put() {
        let s = small(4096);
        let h = s.put(&[]).unwrap();
        assert_ne!(h, 0);
        assert!(s.get(h).unwrap().is_empty());
        s.release(h).unwrap();
    }

    #[test]
    fn put_beyond_capacity() {
        let s = small(4096);
        let err = s.put(&[0u8; 4097]).unwrap_err();
        assert_eq!(err.status(), StatusCode::ErrNoResource);
        let a = s.put(&[1u8; 4000]).unwrap();
        assert!(s.put(&[1u8; 100]).is_err());
        s.release(a).unwrap();
        assert!(s.put(&[1u8; 100]).is_ok());
    }

    #[test]
    fn release_twice_and_get_after_release() {
        let s = small(4096);
        let h = s.put(b"abc").unwrap();
        s.release(h).unwrap();
        assert_eq!(s.release(h).unwrap_err(), HaloError::BadHandle(h));
        assert_eq!(s.get(h).err().unwrap().status(), StatusCode::ErrBadHandle);
        assert!(s.release(0).is_err());
    }

    #[test]
    fn refcounting() {
        let s = small(4096);
        let h = s.put(b"abc").unwrap();
        s.retain(h).unwrap();
        s.release(h).unwrap();
        assert_eq!(&*s.get(h).unwrap(), b"abc");
        s.release(h).unwrap();
        assert!(!s.contains(h));
    }

    #[test]
    fn views_are_aligned_for_f64() {
        let s = small(1 << 16);
        let a = s.put(&[7u8; 3]).unwrap();
        let vals = [1.5f64, 2.5, -3.0];
        let b = s.put(bytemuck::cast_slice(&vals)).unwrap();
        assert_eq!(s.get(b).unwrap().as_f64().unwrap(), &vals);
        s.release(a).unwrap();
        s.release(b).unwrap();
    }

    #[test]
    fn handles_are_never_reused() {
        let s = small(4096);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..100 {
            let h = s.put(b"x").unwrap();
            assert!(seen.insert(h));
            s.release(h).unwrap();
        }
    }

    #[test]
    fn named_regions_are_shared_between_mappings() {
        let dir = tempfile::tempdir().unwrap();
        let app = rand::random();
        let owner = ContentStore::create_named_in(
            dir.path(),
            app,
            StoreOptions {
                capacity: 1 << 16,
                max_entries: 64,
            },
        )
        .unwrap();
        let other = ContentStore::open_named_in(dir.path(), app).unwrap();
        let h = other.put(b"hello").unwrap();
        assert_eq!(&*owner.get(h).unwrap(), b"hello");
        owner.release(h).unwrap();
        assert!(!other.contains(h));
        let path = owner.path().unwrap().to_path_buf();
        drop(other);
        drop(owner);
        assert!(!path.exists());
    }

    #[test]
    fn stress_leaves_zero_leaked_bytes() {
        let s = small(1 << 20);
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let mut live: Vec<(u64, Vec<u8>)> = Vec::new();
        let mut expected_used = 0u64;
        for _ in 0..100_000 {
            match rng.gen_range(0..3) {
                0 | 1 if live.len() < 500 => {
                    let n = rng.gen_range(0..512);
                    let data: Vec<u8> = (0..n).map(|_| rng.gen()).collect();
                    match s.put(&data) {
                        Ok(h) => {
                            expected_used += n as u64;
                            live.push((h, data));
                        }
                        Err(e) => assert_eq!(e.status(), StatusCode::ErrNoResource),
                    }
                }
                _ if !live.is_empty() => {
                    let i = rng.gen_range(0..live.len());
                    let (h, data) = live.swap_remove(i);
                    assert_eq!(&*s.get(h).unwrap(), &data[..]);
                    s.release(h).unwrap();
                    expected_used -= data.len() as u64;
                }
                _ => {}
            }
            // accounting oracle: independent running sum of live lengths
            assert_eq!(s.stats().used_bytes, expected_used);
        }
        for (h, data) in live.drain(..) {
            assert_eq!(&*s.get(h).unwrap(), &data[..]);
            s.release(h).unwrap();
        }
        let st = s.stats();
        assert_eq!(st.used_bytes, 0);
        assert_eq!(st.footprint, 0);
        assert_eq!(st.live_handles, 0);
    }

    #[test]
    fn concurrent_put_get_release() {
        let s = small(1 << 22);
        std::thread::scope(|scope| {
            for t in 0..4u8 {
                let s = &s;
                scope.spawn(move || {
                    for i in 0..2000u32 {
                        let data = vec![t; (i % 300) as usize];
                        let h = s.put(&data).unwrap();
                        assert_eq!(&*s.get(h).unwrap(), &data[..]);
                        s.release(h).unwrap();
                    }
                });
            }
        });
        assert_eq!(s.stats().used_bytes, 0);
    }

    proptest! {
        #[test]
        fn put_get_roundtrip(payloads in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..2048), 1..20)) {
            let s = small(1 << 20);
            let handles: Vec<u64> = payloads.iter().map(|p| s.put(p).unwrap()).collect();
            for (h, p) in handles.iter().zip(&payloads) {
                prop_assert_eq!(&*s.get(*h).unwrap(), &p[..]);
            }
            for h in handles {
                s.release(h).unwrap();
            }
            prop_assert_eq!(s.stats().used_bytes, 0);
        }
    }
}
