#pragma once

#include "nonconj/blr.hpp"
#include "nonconj/ctm.hpp"
#include "nonconj/document.hpp"
#include "nonconj/engine.hpp"
#include "nonconj/error.hpp"
#include "nonconj/eval.hpp"
#include "nonconj/io.hpp"
#include "nonconj/model.hpp"
#include "nonconj/numerics.hpp"
#include "nonconj/optimizer.hpp"
#include "nonconj/parallel.hpp"
#include "nonconj/unigram.hpp"
