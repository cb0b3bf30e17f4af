#pragma once

#include <stdexcept>
#include <string>

namespace rce {

// Base of every error the library throws. Subclasses name the failure kind so
// callers (and tests) can catch precisely.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define RCE_DEFINE_ERROR(Name)                        \
    class Name : public Error {                       \
    public:                                           \
        explicit Name(const std::string& what)        \
            : Error(std::string(#Name ": ") + what) {} \
    }

// tokenizer
RCE_DEFINE_ERROR(WordTooLong);
RCE_DEFINE_ERROR(EmptyWord);
RCE_DEFINE_ERROR(MalformedSequence);
RCE_DEFINE_ERROR(UnknownSpecial);
RCE_DEFINE_ERROR(AlphabetMismatch);

// numerics
RCE_DEFINE_ERROR(ShapeMismatch);
RCE_DEFINE_ERROR(NonFiniteValue);
RCE_DEFINE_ERROR(StepOutOfRange);

// training / models
RCE_DEFINE_ERROR(ConfigError);
RCE_DEFINE_ERROR(NoDictNeighbor);
RCE_DEFINE_ERROR(SequenceTooLong);

// data and evaluation
RCE_DEFINE_ERROR(FormatError);
RCE_DEFINE_ERROR(MissingWord);
RCE_DEFINE_ERROR(InsufficientCategory);
RCE_DEFINE_ERROR(DegenerateTraining);

#undef RCE_DEFINE_ERROR

} // namespace rce
