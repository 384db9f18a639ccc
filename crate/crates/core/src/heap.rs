//! Allocator tuning for training runs.
//!
//! Each training batch records per-frame tapes totalling hundreds of MB.
//! glibc serves those from fresh `mmap`s and returns them on free, so every
//! batch pays first-touch page faults again. Raising the mmap and trim
//! thresholds keeps the pages in the heap for the next batch.

#[cfg(all(target_os = "linux", target_env = "gnu"))]
mod imp {
    use std::ffi::c_int;

    const M_TRIM_THRESHOLD: c_int = -1;
    const M_MMAP_THRESHOLD: c_int = -3;
    /// glibc's upper bound for the mmap threshold on 64-bit targets.
    const MMAP_THRESHOLD_MAX: c_int = 32 << 20;

    extern "C" {
        fn mallopt(param: c_int, value: c_int) -> c_int;
    }

    pub fn retain() -> bool {
        // SAFETY: mallopt only adjusts allocator parameters.
        unsafe { mallopt(M_MMAP_THRESHOLD, MMAP_THRESHOLD_MAX) == 1 && mallopt(M_TRIM_THRESHOLD, c_int::MAX) == 1 }
    }
}

/// Keeps freed memory in the process heap. Returns whether the allocator
/// accepted the setting; a no-op returning `false` off glibc.
pub fn retain_freed_memory() -> bool {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    return imp::retain();
    #[cfg(not(all(target_os = "linux", target_env = "gnu")))]
    false
}

#[cfg(test)]
mod tests {
    #[test]
    fn accepted_on_glibc() {
        let ok = super::retain_freed_memory();
        assert_eq!(ok, cfg!(all(target_os = "linux", target_env = "gnu")));
    }
}
