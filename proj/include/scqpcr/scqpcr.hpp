#ifndef SCQPCR_SCQPCR_HPP
#define SCQPCR_SCQPCR_HPP

/**
 * @file scqpcr.hpp
 *
 * @brief Umbrella header for single-cell qPCR analysis: expression matrices,
 * quality control, zero-inflated model fits, differential expression tests,
 * concordance with aggregates and simulation.
 */

#include "concordance.hpp"
#include "core.hpp"
#include "difftest.hpp"
#include "error.hpp"
#include "io.hpp"
#include "model.hpp"
#include "qc.hpp"
#include "robust.hpp"
#include "sim.hpp"

#endif
