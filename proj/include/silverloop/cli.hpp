#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace silverloop {

// Exit codes: 0 ok, 1 runtime failure, 2 usage error. Failures print one line
// "error: <kind>: <message>" to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace silverloop
