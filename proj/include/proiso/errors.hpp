#pragma once

#include <stdexcept>
#include <string>

namespace proiso {

// Trigger geometry does not fit the image.
class geometry_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A numeric parameter is outside its documented range.
class parameter_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// An on-disk artifact is corrupt, truncated, or carries an unsupported
// schema version.
class format_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss.
class divergence_error : public std::runtime_error {
public:
    divergence_error(int epoch_, int batch_, const std::string& what_)
        : std::runtime_error(what_), epoch(epoch_), batch(batch_) {}
    int epoch;
    int batch;
};

// Two artifacts disagree on tensor layout.
class shape_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class config_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Reports that cannot be combined into one table.
class consistency_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A pipeline stage failed; carries the stage name so callers can tell
// which cached artifacts are still valid.
class stage_error : public std::runtime_error {
public:
    stage_error(std::string stage_name, const std::string& cause)
        : std::runtime_error("stage '" + stage_name + "': " + cause),
          stage(std::move(stage_name)) {}
    std::string stage;
};

}  // namespace proiso
