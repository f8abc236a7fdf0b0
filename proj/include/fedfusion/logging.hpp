#pragma once

namespace fedfusion {

// Routes spdlog to stderr. Level comes from FEDFUSION_LOG (error, info, debug);
// anything else, or unset, means info.
void init_logging();

}  // namespace fedfusion
