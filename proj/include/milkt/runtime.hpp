#pragma once

namespace milkt {

/// Keeps freed large blocks in the heap instead of returning them to the OS.
/// Training allocates and frees the same multi-megabyte gradient buffers on
/// every step; without this each step pays fresh page faults. No-op outside
/// glibc.
void keep_heap_memory();

}  // namespace milkt
