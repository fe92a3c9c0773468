#pragma once

#include <stdexcept>
#include <string>

namespace amc {

enum class ErrorKind {
    dimension,      // shape/config mismatch
    parameter,      // invalid scalar argument (probability, window, ...)
    label,          // class index out of range
    graph,          // autodiff misuse (stale graph, non-scalar loss)
    degenerate,     // degenerate batch statistics
    masked_row,     // softmax row with every entry masked
    data,           // empty/undersized data
    io,             // file system or format error
    state,          // optimizer state inconsistency
    divergence,     // non-finite loss
    usage,          // bad command-line/config input
};

class Error : public std::runtime_error {
   public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

   private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
    if (!cond) {
        throw Error(kind, what);
    }
}

}  // namespace amc
