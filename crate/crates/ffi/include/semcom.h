#ifndef SEMCOM_H
#define SEMCOM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum SemcomChannelKind {
  SEMCOM_CHANNEL_KIND_AWGN = 0,
  SEMCOM_CHANNEL_KIND_RAYLEIGH = 1,
} SemcomChannelKind;

typedef enum SemcomMode {
  /**
   * Initial classifier only.
   */
  SEMCOM_MODE_MSED = 0,
  /**
   * Knowledge-graph refined classifier.
   */
  SEMCOM_MODE_MSED_KG = 1,
} SemcomMode;

/**
 * Status codes. Values 2 to 6 match the command-line exit codes.
 */
typedef enum SemcomStatus {
  SEMCOM_STATUS_OK = 0,
  SEMCOM_STATUS_NULL_POINTER = 1,
  SEMCOM_STATUS_INVALID_INPUT = 2,
  SEMCOM_STATUS_CONFIG = 3,
  SEMCOM_STATUS_DATA = 4,
  SEMCOM_STATUS_NUMERIC = 5,
  SEMCOM_STATUS_IO = 6,
  SEMCOM_STATUS_BUFFER_TOO_SMALL = 7,
  SEMCOM_STATUS_PANIC = 8,
} SemcomStatus;

/**
 * Channel model with fixed kind, power and SNR.
 */
typedef struct SemcomChannel SemcomChannel;

/**
 * Run configuration.
 */
typedef struct SemcomConfig SemcomConfig;

/**
 * A trained pipeline with its embeddings.
 */
typedef struct SemcomPipeline SemcomPipeline;

/**
 * Channel width and symbol counts for one compression ratio.
 */
typedef struct SemcomRate {
  size_t channels;
  /**
   * Complex channel symbols per image.
   */
  size_t k;
  /**
   * Image reals per image.
   */
  size_t n;
  double achieved;
} SemcomRate;

typedef struct SemcomComplexity {
  uint64_t parameters;
  uint64_t additions;
  uint64_t multiplications;
} SemcomComplexity;

/**
 * One detection in pixel coordinates; `class_index` excludes background.
 */
typedef struct SemcomDetection {
  size_t class_index;
  double score;
  double x1;
  double y1;
  double x2;
  double y2;
} SemcomDetection;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *semcom_version(void);

/**
 * Copy the calling thread's last error message into `buf` and return the buffer size
 * needed to hold it, terminator included. `buf` may be null to query the size.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t semcom_last_error(char *buf, size_t len);

/**
 * Default run configuration.
 *
 * # Safety
 * `out` must be a valid pointer; on success it receives a handle to free with
 * [`semcom_config_free`].
 */
enum SemcomStatus semcom_config_default(struct SemcomConfig **out);

/**
 * Parse a TOML configuration; omitted fields take their defaults.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SemcomStatus semcom_config_from_toml(const char *toml, struct SemcomConfig **out);

/**
 * Load a TOML configuration file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SemcomStatus semcom_config_load(const char *path, struct SemcomConfig **out);

/**
 * Serialize the configuration as TOML into `buf`; `needed` receives the size
 * required including the terminator. Returns `BufferTooSmall` when `len` is short.
 *
 * # Safety
 * `config` must come from this library, `buf` must be null or valid for `len` bytes,
 * and `needed` must be a valid pointer.
 */
enum SemcomStatus semcom_config_to_toml(const struct SemcomConfig *config,
                                        char *buf,
                                        size_t len,
                                        size_t *needed);

/**
 * # Safety
 * `config` must be null or a handle from this library not yet freed.
 */
void semcom_config_free(struct SemcomConfig *config);

/**
 * Rate accounting for the ratio `num/den` under `config`.
 *
 * # Safety
 * `config` must come from this library and `out` must be a valid pointer.
 */
enum SemcomStatus semcom_rate(const struct SemcomConfig *config,
                              uint64_t num,
                              uint64_t den,
                              struct SemcomRate *out);

/**
 * Per-image parameter and operation counts of the configured system.
 *
 * # Safety
 * `config` must come from this library and `out` must be a valid pointer.
 */
enum SemcomStatus semcom_complexity(const struct SemcomConfig *config,
                                    enum SemcomMode mode_,
                                    struct SemcomComplexity *out);

/**
 * Channel with average transmit power `power` at `snr_db`. Rayleigh blocks are
 * equalized at the receiver.
 *
 * # Safety
 * `out` must be a valid pointer; free the handle with [`semcom_channel_free`].
 */
enum SemcomStatus semcom_channel_new(enum SemcomChannelKind kind,
                                     double power,
                                     double snr_db,
                                     struct SemcomChannel **out);

/**
 * # Safety
 * `channel` must be null or a handle from this library not yet freed.
 */
void semcom_channel_free(struct SemcomChannel *channel);

/**
 * Pack `len` reals into complex symbols, normalize to the channel power, transmit
 * one block seeded by `seed` and unpack the received reals into `out` (`len` values).
 *
 * # Safety
 * `channel` must come from this library; `input` and `out` must be valid for `len`
 * doubles.
 */
enum SemcomStatus semcom_channel_transmit(const struct SemcomChannel *channel,
                                          const double *input,
                                          size_t len,
                                          uint64_t seed,
                                          double *out);

/**
 * Load the pipeline trained for ratio `num/den` and `seed` from the run directory
 * `dir` (as written by the command-line tool). `MsedKg` also loads the knowledge-graph
 * embeddings from `dir`.
 *
 * # Safety
 * `config` must come from this library, `dir` must be a NUL-terminated string and
 * `out` a valid pointer; free the handle with [`semcom_pipeline_free`].
 */
enum SemcomStatus semcom_pipeline_load(const struct SemcomConfig *config,
                                       const char *dir,
                                       uint64_t num,
                                       uint64_t den,
                                       uint64_t seed,
                                       enum SemcomMode mode_,
                                       struct SemcomPipeline **out);

/**
 * # Safety
 * `pipeline` must be null or a handle from this library not yet freed.
 */
void semcom_pipeline_free(struct SemcomPipeline *pipeline);

/**
 * Side length in pixels of the square images the pipeline expects, 0 for null.
 *
 * # Safety
 * `pipeline` must be null or a handle from this library.
 */
size_t semcom_pipeline_image_size(const struct SemcomPipeline *pipeline);

/**
 * Number of foreground classes, 0 for null.
 *
 * # Safety
 * `pipeline` must be null or a handle from this library.
 */
size_t semcom_pipeline_classes(const struct SemcomPipeline *pipeline);

/**
 * Send one planar RGB image (`3·S·S` bytes, channel-major) through the pipeline and
 * the channel, and write its detections into `out`. `count` receives the number of
 * detections; when it exceeds `capacity` nothing is written and `BufferTooSmall` is
 * returned.
 *
 * # Safety
 * `pipeline` and `channel` must come from this library, `rgb` must be valid for
 * `3·S·S` bytes, `out` must be null or valid for `capacity` entries and `count` must
 * be a valid pointer.
 */
enum SemcomStatus semcom_pipeline_detect(const struct SemcomPipeline *pipeline,
                                         const uint8_t *rgb,
                                         const struct SemcomChannel *channel,
                                         uint64_t seed,
                                         struct SemcomDetection *out,
                                         size_t capacity,
                                         size_t *count);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEMCOM_H */
