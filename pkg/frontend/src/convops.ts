/**
 * Convolution and resampling primitives with backend-portable gradients.
 *
 * The WASM backend implements forward convolution and the input-gradient
 * kernel but not the filter-gradient kernel, so `convSame` carries a custom
 * gradient that expresses both backward passes as forward convolutions:
 *
 *   d/dInput  = transposed convolution of the upstream gradient with the
 *               filter (the standard input-gradient identity);
 *   d/dFilter = a convolution that treats the padded input (batch moved to
 *               the channel axis) as the image and the upstream gradient as
 *               the filter, with dilation equal to the forward stride.
 *
 * Nearest-neighbour upsampling is likewise built from rank-3 tiles because
 * the resize kernels lack gradients on WASM.
 */

import * as tf from '@tensorflow/tfjs';

/** TensorFlow 'same' padding split for one axis: [before, after]. */
export function samePad(size: number, kernel: number, stride: number): [number, number] {
  const out = Math.ceil(size / stride);
  const total = Math.max((out - 1) * stride + kernel - size, 0);
  const before = Math.floor(total / 2);
  return [before, total - before];
}

/**
 * 2D convolution, NHWC, 'same' padding, square stride, with gradients for
 * both the input and the filter built from forward ops.
 */
export function convSame(x: tf.Tensor4D, w: tf.Tensor4D, stride: number): tf.Tensor4D {
  const k = w.shape[0];
  const [padTop, padBottom] = samePad(x.shape[1], k, stride);
  const [padLeft, padRight] = samePad(x.shape[2], k, stride);
  const xShape = x.shape;

  const op = tf.customGrad((...args: Array<tf.Tensor | tf.GradSaveFunc>) => {
    const xIn = args[0] as tf.Tensor4D;
    const wIn = args[1] as tf.Tensor4D;
    const save = args[2] as tf.GradSaveFunc;
    const xPad = tf.pad4d(xIn, [[0, 0], [padTop, padBottom], [padLeft, padRight], [0, 0]]);
    save([xPad, wIn]);
    const value = tf.conv2d(xPad, wIn, stride, 'valid');
    const gradFunc = (dy: tf.Tensor4D, saved: tf.Tensor[]) => {
      const [xp, wf] = saved as [tf.Tensor4D, tf.Tensor4D];
      const dxPad = tf.conv2dTranspose(dy, wf, xp.shape, stride, 'valid');
      const dx = tf.slice(dxPad, [0, padTop, padLeft, 0], xShape);
      // Filter gradient: image = padded input with batch as channels,
      // filter = upstream gradient with batch as input depth.
      const xT = tf.transpose(xp, [3, 1, 2, 0]) as tf.Tensor4D;
      const dyT = tf.transpose(dy, [1, 2, 0, 3]) as tf.Tensor4D;
      const g = tf.conv2d(xT, dyT, 1, 'valid', 'NHWC', stride);
      const dw = tf.transpose(g, [1, 2, 0, 3]);
      return [dx, dw];
    };
    return { value, gradFunc };
  });
  return op(x, w) as tf.Tensor4D;
}

/** 2x nearest-neighbour upsampling via rank-3 tiles (gradient-safe). */
export function upsample2(x: tf.Tensor4D): tf.Tensor4D {
  const [b, h, w, c] = x.shape;
  const rows = tf
    .tile(x.reshape([b * h, 1, w * c]), [1, 2, 1])
    .reshape([b, 2 * h, w, c]);
  return tf
    .tile(rows.reshape([b * 2 * h * w, 1, c]), [1, 2, 1])
    .reshape([b, 2 * h, 2 * w, c]) as tf.Tensor4D;
}
