#pragma once

#include <stdexcept>
#include <string>

namespace taskprior {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class MissingDimension : public Error {
public:
    explicit MissingDimension(const std::string& dim)
        : Error("config is missing dimension: " + dim), dimension(dim) {}
    std::string dimension;
};

class UnknownChoice : public Error {
public:
    UnknownChoice(const std::string& dim, const std::string& choice)
        : Error("unknown choice '" + choice + "' for dimension: " + dim),
          dimension(dim), choice(choice) {}
    std::string dimension;
    std::string choice;
};

class EmptyTask : public Error {
public:
    explicit EmptyTask(const std::string& task_id)
        : Error("task has no trials: " + task_id), task_id(task_id) {}
    std::string task_id;
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error("io error: " + what) {}
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, int line)
        : Error("parse error at line " + std::to_string(line) + ": " + what), line(line) {}
    int line;
};

// Fisher diagonal with vanishing trace; callers retry with a fresh seed.
class DegenerateFim : public Error {
public:
    explicit DegenerateFim(const std::string& what) : Error("degenerate FIM: " + what) {}
};

// Rank correlation is undefined when one of the inputs is constant.
class AllTied : public Error {
public:
    explicit AllTied(const std::string& what) : Error("all values tied: " + what) {}
};

class InsufficientTasks : public Error {
public:
    explicit InsufficientTasks(const std::string& what)
        : Error("insufficient tasks: " + what) {}
};

class ZeroVector : public Error {
public:
    explicit ZeroVector(const std::string& what) : Error("zero vector: " + what) {}
};

class InvalidBudget : public Error {
public:
    explicit InvalidBudget(const std::string& what) : Error("invalid budget: " + what) {}
};

}  // namespace taskprior
