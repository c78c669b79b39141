#pragma once

namespace degrad {

// Execution mode for the data-parallel kernels. Serial is the reference
// implementation; Parallel uses OpenMP when compiled in. Both modes produce
// bit-identical results: every output element is computed by exactly one
// thread with the same per-element operation order.
enum class Exec { Serial, Parallel };

// Number of worker threads the Parallel mode may use. Honors the
// DEGRAD_THREADS environment variable as an upper cap.
int max_threads();

// Applies the DEGRAD_THREADS cap to the OpenMP runtime. Called once by the
// CLI and the benchmark; safe to call repeatedly.
void apply_thread_cap();

}  // namespace degrad
