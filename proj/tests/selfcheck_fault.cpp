// Built with MCLD_FAULT_INJECT_ATTENTION: the attention kernel is
// deliberately perturbed and the selfcheck must catch it.
#include <cstdio>

#include "mcld/selfcheck.hpp"

int main() {
    const int rc = mcld::selfcheck_main();
    if (rc == 0) {
        std::puts("FAULT NOT DETECTED: selfcheck passed with a broken attention kernel");
        return 1;
    }
    std::puts("fault detected as expected");
    return 0;
}
