#pragma once

namespace stower {
class EvalClassifier;
class CharLm;
} // namespace stower
