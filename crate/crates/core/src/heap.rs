use std::sync::Once;

/// Ask glibc malloc to keep freed blocks instead of returning them to the
/// kernel. Training allocates and frees the same multi-megabyte buffers
/// every iteration, and re-faulting those pages dominated step time.
pub fn retain_freed_memory() {
    static ONCE: Once = Once::new();
    ONCE.call_once(|| {
        #[cfg(all(target_os = "linux", target_env = "gnu"))]
        unsafe {
            // SAFETY: mallopt only adjusts allocator tunables.
            libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
            libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
        }
    });
}
