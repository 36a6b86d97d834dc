use std::alloc::{self, Layout};
use std::ops::{Deref, DerefMut};
use std::ptr::NonNull;

use super::Bucket;

pub const CACHELINE: usize = 64;
pub const BUCKETS_PER_LINE: usize = CACHELINE / std::mem::size_of::<Bucket>();

const HUGEPAGE_THRESHOLD: usize = 4 << 20;

/// A 64-byte aligned, heap-allocated bucket array.
pub(crate) struct BucketArray {
    ptr: NonNull<Bucket>,
    len: usize,
}

// SAFETY: BucketArray owns its allocation like a Box<[Bucket]>.
unsafe impl Send for BucketArray {}
unsafe impl Sync for BucketArray {}

impl BucketArray {
    /// Allocates `len` buckets, each initialised to `fill`. Returns `None` if
    /// the allocator refuses.
    pub fn filled(len: usize, fill: Bucket) -> Option<Self> {
        if len == 0 {
            return Some(BucketArray {
                ptr: NonNull::dangling(),
                len: 0,
            });
        }
        let layout = Self::layout(len)?;
        // SAFETY: layout has nonzero size.
        let raw = unsafe { alloc::alloc(layout) } as *mut Bucket;
        let ptr = NonNull::new(raw)?;
        if layout.size() >= HUGEPAGE_THRESHOLD {
            advise_hugepages(raw as *mut u8, layout.size());
        }
        for i in 0..len {
            // SAFETY: i < len, allocation holds len buckets.
            unsafe { raw.add(i).write(fill) };
        }
        Some(BucketArray { ptr, len })
    }

    fn layout(len: usize) -> Option<Layout> {
        let size = len.checked_mul(std::mem::size_of::<Bucket>())?;
        Layout::from_size_align(size, CACHELINE).ok()
    }

    pub fn bytes(&self) -> usize {
        self.len * std::mem::size_of::<Bucket>()
    }
}

#[cfg(target_os = "linux")]
fn advise_hugepages(ptr: *mut u8, size: usize) {
    let page = 2 << 20;
    let start = (ptr as usize).div_ceil(page) * page;
    let end = (ptr as usize + size) / page * page;
    if end > start {
        // SAFETY: the range lies inside our allocation; madvise is advisory.
        unsafe {
            libc::madvise(start as *mut libc::c_void, end - start, libc::MADV_HUGEPAGE);
        }
    }
}

#[cfg(not(target_os = "linux"))]
fn advise_hugepages(_ptr: *mut u8, _size: usize) {}

impl Deref for BucketArray {
    type Target = [Bucket];

    #[inline(always)]
    fn deref(&self) -> &[Bucket] {
        // SAFETY: ptr is valid for len initialised buckets (or dangling with len 0).
        unsafe { std::slice::from_raw_parts(self.ptr.as_ptr(), self.len) }
    }
}

impl DerefMut for BucketArray {
    #[inline(always)]
    fn deref_mut(&mut self) -> &mut [Bucket] {
        // SAFETY: as above, and &mut self gives exclusive access.
        unsafe { std::slice::from_raw_parts_mut(self.ptr.as_ptr(), self.len) }
    }
}

impl Drop for BucketArray {
    fn drop(&mut self) {
        if self.len == 0 {
            return;
        }
        let layout = Self::layout(self.len).expect("layout was valid at allocation");
        // SAFETY: allocated with the same layout in `filled`.
        unsafe { alloc::dealloc(self.ptr.as_ptr() as *mut u8, layout) };
    }
}

impl Clone for BucketArray {
    fn clone(&self) -> Self {
        let mut out = BucketArray::filled(self.len, Bucket::EMPTY).expect("allocation failed");
        out.copy_from_slice(self);
        out
    }
}
