#pragma once

#include <ostream>

namespace volcon {

// Built-in verification suite: gradient checks against finite differences,
// the contrastive loss against a brute-force reference, permutation
// invariance of set aggregation, the K=1 degeneration, and optimiser
// closed forms. Prints one [PASS]/[FAIL] line per property and returns the
// number of failures.
int run_selfcheck(std::ostream& out);

}  // namespace volcon
