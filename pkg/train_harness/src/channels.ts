/**
 * Attribute and channel-name tables matching the fgcount tensor files.
 *
 * Every counted object carries three binary attributes; each has two known
 * classes plus an unknown response (codes 0, 1, 2). Channel names inside a
 * stack directory follow the fgcount convention, so the harness can read
 * its ground truth straight from `fgcount genmaps` output and write
 * predictions the fgcount evaluator accepts.
 */

export const ATTRIBUTES = ["species", "sex", "age"] as const;
export type Attribute = (typeof ATTRIBUTES)[number];

export const CLASS_NAMES: Record<Attribute, readonly [string, string]> = {
  species: ["elephant", "fur"],
  sex: ["male", "female"],
  age: ["adult", "pup"],
};

export const N_CLASSES = 2; // known classes per attribute
export const UNKNOWN = "unknown";

export function densityChannelName(attribute: Attribute, code: number): string {
  const name = code < N_CLASSES ? CLASS_NAMES[attribute][code] : UNKNOWN;
  return `density_${attribute}_${name}`;
}

export function segChannelName(attribute: Attribute, code: number): string {
  return `seg_${attribute}_${CLASS_NAMES[attribute][code]}`;
}

export function maskChannelName(attribute: Attribute): string {
  return `mask_${attribute}`;
}
