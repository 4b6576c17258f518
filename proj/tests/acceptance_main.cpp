// Acceptance suite: one line per criterion, non-zero exit if any fails.

#include <cstdio>

#include "galu/verify.hpp"

int main() {
    int failures = 0;
    const auto results = galu::acceptance_criteria([&](const galu::CheckResult& r) {
        std::printf("%s criterion %-45s %7.2fs  %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(),
                    r.seconds, r.detail.c_str());
        std::fflush(stdout);
        if (!r.pass) ++failures;
    });
    std::printf("%d/%zu criteria passed\n", static_cast<int>(results.size()) - failures,
                results.size());
    return failures == 0 ? 0 : 1;
}
