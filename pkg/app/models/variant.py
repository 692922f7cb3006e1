"""模型变体枚举：一个标签对应模型库中的一种架构。"""

from enum import Enum


class ModelVariant(str, Enum):
    """模型变体。协同注意力按顶层表示的取法拆成 review / summary / concat 三个标签。"""

    REVIEW_ONLY_POOL = "review_only_pool"
    REVIEW_ONLY_SELFATTN = "review_only_selfattn"
    SUMMARY_ONLY_POOL = "summary_only_pool"
    SUMMARY_ONLY_SELFATTN = "summary_only_selfattn"
    SEPARATE_POOL = "separate_pool"
    SEPARATE_SELFATTN = "separate_selfattn"
    JOINT_POOL = "joint_pool"
    JOINT_SELFATTN = "joint_selfattn"
    JOINT_HARD = "joint_hard"
    JOINT_COATTN_REVIEW = "joint_coattn_review"
    JOINT_COATTN_SUMMARY = "joint_coattn_summary"
    JOINT_COATTN_CONCAT = "joint_coattn_concat"
    REVIEW_CENTRIC = "review_centric"
    SUMMARY_CENTRIC = "summary_centric"

    @property
    def is_review_only(self) -> bool:
        return self in (ModelVariant.REVIEW_ONLY_POOL, ModelVariant.REVIEW_ONLY_SELFATTN)

    @property
    def is_summary_only(self) -> bool:
        return self in (ModelVariant.SUMMARY_ONLY_POOL, ModelVariant.SUMMARY_ONLY_SELFATTN)

    @property
    def is_single_text(self) -> bool:
        return self.is_review_only or self.is_summary_only

    @property
    def is_separate(self) -> bool:
        return self in (ModelVariant.SEPARATE_POOL, ModelVariant.SEPARATE_SELFATTN)

    @property
    def is_joint_sequence(self) -> bool:
        """评论与摘要拼成一个序列、只用一个 BiLSTM 的变体。"""
        return self in (ModelVariant.JOINT_POOL, ModelVariant.JOINT_SELFATTN, ModelVariant.JOINT_HARD)

    @property
    def is_coattn(self) -> bool:
        return self.value.startswith("joint_coattn_")

    @property
    def coattn_mode(self) -> str:
        """协同注意力顶层取法：review / summary / concat。"""
        return self.value.removeprefix("joint_coattn_") if self.is_coattn else ""

    @property
    def is_centric(self) -> bool:
        return self in (ModelVariant.REVIEW_CENTRIC, ModelVariant.SUMMARY_CENTRIC)

    @property
    def uses_self_attention(self) -> bool:
        return self.value.endswith("_selfattn") or self is ModelVariant.JOINT_HARD

    @property
    def uses_review(self) -> bool:
        return not self.is_summary_only

    @property
    def uses_summary(self) -> bool:
        return not self.is_review_only
